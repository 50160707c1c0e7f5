// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/cli.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>

using namespace mspnf;
using mspnf::testing::TempDir;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "mspnf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const std::vector<std::string> kTinyScene{"width=12",     "height=12",        "num_train_views=4", "num_test_views=2",
                                          "num_points=600", "train_samples=16", "gt_sample_factor=4"};
const std::vector<std::string> kTinyRun{"feature_dim=8",    "mlp_width=16",     "mlp_layers=2",
                                        "decoder_width=16", "decoder_layers=2", "global_triplane_res=8",
                                        "num_samples=16",   "batch_rays=32",    "lr_decoder=5e-3",
                                        "lr_features=2e-2"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == kExitUsage);
    const auto unknown = run({"frobnicate"});
    CHECK(unknown.code == kExitUsage);
    CHECK(unknown.err.find("gen-scene") != std::string::npos);
    CHECK(run({"train", "--scene"}).code == kExitUsage);
    const auto bad_key = run({"train", "--print-config", "bogus_key=1"});
    CHECK(bad_key.code == kExitUsage);
    CHECK(bad_key.err.find("num_local_levels") != std::string::npos);
    CHECK(run({"train", "--print-config", "iterations=lots"}).code == kExitUsage);
    CHECK(run({"eval", "--checkpoint", "x"}).code == kExitUsage);
  }

  TEST_CASE("help exits with 0") {
    const auto r = run({"train", "--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("lr_decoder") != std::string::npos);
  }

  TEST_CASE("runtime errors exit with 2") {
    TempDir dir("cli_rt");
    CHECK(run({"train", "--scene", (dir / "missing").string(), "--out", (dir / "run").string()}).code == kExitRuntime);
    CHECK(run({"subsample", "--in", (dir / "none.ply").string(), "--out", dir.path().string()}).code == kExitRuntime);
  }

  TEST_CASE("print-config applies overrides over the file") {
    TempDir dir("cli_cfg");
    {
      std::ofstream f(dir / "run.cfg");
      f << "iterations = 7\nseed = 3\n";
    }
    const auto r = run({"train", "--print-config", "--config", (dir / "run.cfg").string(), "seed=9"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("iterations = 7") != std::string::npos);
    CHECK(r.out.find("seed = 9") != std::string::npos);
  }

  TEST_CASE("environment seed applies only when nothing else sets it") {
    ::setenv("MSPNF_SEED", "77", 1);
    const auto env = run({"train", "--print-config"});
    const auto explicit_seed = run({"train", "--print-config", "seed=5"});
    ::unsetenv("MSPNF_SEED");
    CHECK(env.out.find("seed = 77") != std::string::npos);
    CHECK(explicit_seed.out.find("seed = 5") != std::string::npos);
  }

  TEST_CASE("subsample prints the level edges") {
    TempDir dir("cli_sub");
    std::mt19937_64 rng(1);
    save_point_cloud(dir / "in.ply", mspnf::testing::random_cloud(rng, 300, 0.0, 0.05));
    const auto r = run({"subsample", "--in", (dir / "in.ply").string(), "--omega", "0.004", "--gamma", "1.6",
                        "--levels", "4", "--out", (dir / "h").string()});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("level 1: edge 0.004,") != std::string::npos);
    CHECK(r.out.find("level 4: edge 0.016384,") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "h" / "level_4.ply"));
  }

  TEST_CASE("gen-scene, train, render, and eval") {
    TempDir dir("cli_flow");
    const std::string scene = (dir / "scene").string();
    const std::string run_dir = (dir / "run").string();
    REQUIRE(run(cat({"gen-scene", "--out", scene}, kTinyScene)).code == kExitOk);
    const auto tr = run(cat({"train", "--scene", scene, "--out", run_dir, "--workers", "1", "iterations=6",
                             "eval_every=3"},
                            kTinyRun));
    REQUIRE(tr.code == kExitOk);
    CHECK(std::count(tr.out.begin(), tr.out.end(), '\n') == 2);
    CHECK(std::filesystem::exists(dir / "run" / "config.txt"));
    const std::string ckpt = (dir / "run" / "final.ckpt").string();

    const auto rd = run({"render", "--checkpoint", ckpt, "--camera", scene + "/test/000.cam", "--out",
                         (dir / "img.f32img").string(), "--workers", "1"});
    REQUIRE(rd.code == kExitOk);
    const Image img = load_image(dir / "img.f32img");
    CHECK(img.width == 12);

    const auto ev = run({"eval", "--checkpoint", ckpt, "--scene", scene, "--workers", "1", "--out",
                         (dir / "m.json").string()});
    REQUIRE(ev.code == kExitOk);
    CHECK(ev.out.starts_with("{\"psnr\": "));
    CHECK(ev.out.find("\"views\": 2") != std::string::npos);
    CHECK(mspnf::testing::read_bytes(dir / "m.json") == ev.out);

    // Scoring saved predictions reproduces the rendered evaluation.
    std::filesystem::create_directories(dir / "pred");
    for (int i = 0; i < 2; ++i) {
      const std::string stem = "00" + std::to_string(i);
      REQUIRE(run({"render", "--checkpoint", ckpt, "--camera", scene + "/test/" + stem + ".cam", "--out",
                   (dir / "pred" / (stem + ".f32img")).string(), "--workers", "1"})
                  .code == kExitOk);
    }
    const auto ev2 = run({"eval", "--predictions", (dir / "pred").string(), "--scene", scene});
    REQUIRE(ev2.code == kExitOk);
    CHECK(ev2.out == ev.out);

    CHECK(run({"render", "--checkpoint", ckpt, "--camera", scene + "/test/000.cam", "--out",
               (dir / "x.png").string()})
              .code == kExitRuntime);
  }

  TEST_CASE("ablate writes a CSV row per variant") {
    TempDir dir("cli_abl");
    const std::string scene = (dir / "scene").string();
    REQUIRE(run(cat({"gen-scene", "--out", scene}, kTinyScene)).code == kExitOk);
    const std::string csv = (dir / "abl.csv").string();
    const auto r = run(cat({"ablate", "--scene", scene, "--grid", "global", "--out", csv, "--workers", "1",
                            "iterations=2"},
                           kTinyRun));
    REQUIRE(r.code == kExitOk);
    const std::string text = mspnf::testing::read_bytes(csv);
    CHECK(text.starts_with("variant,psnr,ssim,iterations,wall_seconds\n"));
    CHECK(text.find("\nglobal-only,") != std::string::npos);
    CHECK(text.find("\nlocal-only,") != std::string::npos);
    CHECK(std::filesystem::exists(csv + ".config.txt"));
    CHECK(run({"ablate", "--scene", scene, "--grid", "nonsense-grid", "--out", csv}).code == kExitUsage);
  }
}
