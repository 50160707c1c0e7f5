// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

using namespace mspnf;
using mspnf::testing::TempDir;

namespace {

const SyntheticScene& tiny_scene() {
  static const SyntheticScene scene = generate_scene(mspnf::testing::tiny_scene_spec());
  return scene;
}

FieldParameters one_tensor(double value, ParamGroup group) {
  FieldParameters p;
  p.add("t", {2}, group);
  p.tensors[0].values = {value, -value};
  return p;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning rate schedule") {
    TrainConfig c;
    c.lr_decoder = 1e-3;
    c.lr_features = 4e-3;
    c.decay_rate = 0.1;
    c.decay_every = 100;
    CHECK(lr_at(0, c).decoder == 1e-3);
    CHECK(lr_at(100, c).decoder == doctest::Approx(1e-4));
    CHECK(lr_at(50, c).features == doctest::Approx(4e-3 * std::sqrt(0.1)));
    c.decay_mode = "step";
    CHECK(lr_at(99, c).decoder == 1e-3);
    CHECK(lr_at(250, c).decoder == doctest::Approx(1e-5));
    const LearningRates lr{1.0, 2.0};
    CHECK(lr.for_group(ParamGroup::Decoder) == 1.0);
    CHECK(lr.for_group(ParamGroup::Features) == 2.0);
  }

  TEST_CASE("first adam step moves each weight by about the learning rate") {
    FieldParameters p = one_tensor(0.0, ParamGroup::Features);
    const FieldParameters g = one_tensor(3.0, ParamGroup::Features);
    OptimizerState s = make_optimizer_state(p);
    TrainConfig c;
    adam_step(p, g, s, {0.5, 0.01}, c);
    CHECK(s.step == 1);
    CHECK(p.tensors[0].values[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.tensors[0].values[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(s.m.tensors[0].values[0] == doctest::Approx(0.3));
    CHECK(s.v.tensors[0].values[0] == doctest::Approx(0.009));
  }

  TEST_CASE("adam rejects non-finite gradients and mismatched layouts") {
    FieldParameters p = one_tensor(1.0, ParamGroup::Decoder);
    FieldParameters g = one_tensor(1.0, ParamGroup::Decoder);
    g.tensors[0].values[1] = std::numeric_limits<double>::quiet_NaN();
    OptimizerState s = make_optimizer_state(p);
    try {
      adam_step(p, g, s, {1e-3, 1e-3}, TrainConfig{});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("'t' at element 1") != std::string::npos);
    }
    CHECK(s.step == 0);
    CHECK_THROWS_AS(adam_step(p, one_tensor(1.0, ParamGroup::Features), s, {1, 1}, TrainConfig{}), Error);
  }

  TEST_CASE("sgd step") {
    FieldParameters p = one_tensor(1.0, ParamGroup::Decoder);
    OptimizerState s = make_optimizer_state(p);
    sgd_step(p, one_tensor(2.0, ParamGroup::Decoder), s, {0.25, 9.0});
    CHECK(p.tensors[0].values == std::vector<double>{0.5, -0.5});
  }

  TEST_CASE("point subsets") {
    std::mt19937_64 rng(1);
    const auto cloud = mspnf::testing::random_cloud(rng, 1000);
    CHECK(subset_points(cloud, 0.0, 3).empty());
    CHECK(subset_points(cloud, 1.0, 3).positions == cloud.positions);
    const auto a = subset_points(cloud, 0.1, 3);
    CHECK(a.count() == 100);
    CHECK(subset_points(cloud, 0.1, 3).positions == a.positions);
    CHECK(subset_points(cloud, 0.1, 4).positions != a.positions);
    // Kept points appear in input order.
    std::size_t j = 0;
    for (const auto& p : a.positions) {
      while (j < cloud.count() && cloud.positions[j] != p) ++j;
      CHECK(j < cloud.count());
    }
    CHECK_THROWS_AS(subset_points(cloud, 1.5, 3), Error);
  }

  TEST_CASE("an empty subset still builds a model") {
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.point_ratio = 0.0;
    const Model m = build_model(c, tiny_scene().dataset.cloud);
    for (const auto& level : m.field->hierarchy().levels) CHECK(level.size() == 0);
    const auto e = evaluate(m, tiny_scene().dataset.test, 1);
    CHECK(std::isfinite(e.psnr));
  }

  TEST_CASE("checkpoint round trip preserves geometry, parameters, and moments") {
    TempDir dir("ckpt");
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.iterations = 3;
    TrainOptions o;
    const auto r = train(tiny_scene().dataset, c, o);
    write_checkpoint(dir / "a.ckpt", pack_checkpoint(r.model, &r.state));
    const CheckpointFile file = read_checkpoint(dir / "a.ckpt");
    CHECK(file.step == 3);
    const Model m = unpack_model(file);
    const OptimizerState s = unpack_optimizer(file, m);
    CHECK(s.step == 3);
    for (std::size_t k = 0; k < m.params.tensors.size(); ++k) {
      CHECK(m.params.tensors[k].values == r.model.params.tensors[k].values);
      CHECK(s.m.tensors[k].values == r.state.m.tensors[k].values);
      CHECK(s.v.tensors[k].values == r.state.v.tensors[k].values);
    }
    const auto& h0 = r.model.field->hierarchy();
    const auto& h1 = m.field->hierarchy();
    REQUIRE(h0.levels.size() == h1.levels.size());
    for (std::size_t s = 0; s < h0.levels.size(); ++s) {
      CHECK(h0.levels[s].representatives == h1.levels[s].representatives);
      CHECK(h0.levels[s].voxel_edge == h1.levels[s].voxel_edge);
    }
    CHECK(m.field->frame().rotation == r.model.field->frame().rotation);
    const auto& view = tiny_scene().dataset.test[0];
    const auto opts = eval_render_options(c, 1);
    const Image a = render_image(view.camera, *r.model.field, r.model.params, opts);
    const Image b = render_image(view.camera, *m.field, m.params, opts);
    CHECK(a.data == b.data);
    CHECK(checkpoint_config_text(c) == file.config_text);
  }

  TEST_CASE("corrupted checkpoints are rejected") {
    TempDir dir("bad");
    const Model m = build_model(mspnf::testing::tiny_run_config(), tiny_scene().dataset.cloud);
    write_checkpoint(dir / "m.ckpt", pack_checkpoint(m, nullptr));
    std::string bytes = mspnf::testing::read_bytes(dir / "m.ckpt");
    {
      std::ofstream out(dir / "short.ckpt", std::ios::binary);
      out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "short.ckpt"), ParseError);
    bytes[0] = 'X';
    {
      std::ofstream out(dir / "magic.ckpt", std::ios::binary);
      out << bytes;
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "magic.ckpt"), ParseError);
    CHECK_THROWS_AS(unpack_optimizer(read_checkpoint(dir / "m.ckpt"), m), ParseError);
  }

  TEST_CASE("training reduces the loss and writes its outputs") {
    TempDir dir("train");
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.iterations = 60;
    c.train.eval_every = 20;
    c.train.checkpoint_every = 30;
    std::vector<std::uint64_t> seen;
    TrainOptions o;
    o.out_dir = dir.path();
    o.on_log = [&](const LogRecord& r) { seen.push_back(r.step); };
    const auto r = train(tiny_scene().dataset, c, o);
    REQUIRE(r.losses.size() == 60);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
      first += r.losses[i];
      last += r.losses[50 + i];
    }
    CHECK(last < first);
    CHECK(seen == std::vector<std::uint64_t>{20, 40, 60});
    CHECK(std::filesystem::exists(dir / "step_000030.ckpt"));
    CHECK(std::filesystem::exists(dir / "step_000060.ckpt"));
    CHECK(std::filesystem::exists(dir / "final.ckpt"));
    CHECK(count_lines(dir / "log.jsonl") == 3);
    CHECK(r.final_eval.view_psnr.size() == tiny_scene().dataset.test.size());
  }

  TEST_CASE("resuming continues the same trajectory") {
    TempDir a("full"), b("resume");
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.iterations = 12;
    c.train.checkpoint_every = 6;
    TrainOptions full;
    full.out_dir = a.path();
    train(tiny_scene().dataset, c, full);
    TrainOptions resumed;
    resumed.out_dir = b.path();
    resumed.resume = a / "step_000006.ckpt";
    const auto r = train(tiny_scene().dataset, c, resumed);
    CHECK(r.losses.size() == 6);
    CHECK(mspnf::testing::read_bytes(a / "final.ckpt") == mspnf::testing::read_bytes(b / "final.ckpt"));
  }

  TEST_CASE("worker count does not change the trained model") {
    TempDir a("w1"), b("w3");
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.iterations = 5;
    TrainOptions o1, o3;
    o1.out_dir = a.path();
    o3.out_dir = b.path();
    o3.workers = 3;
    const auto r1 = train(tiny_scene().dataset, c, o1);
    const auto r3 = train(tiny_scene().dataset, c, o3);
    CHECK(r1.losses == r3.losses);
    CHECK(r1.final_eval.psnr == r3.final_eval.psnr);
    CHECK(mspnf::testing::read_bytes(a / "final.ckpt") == mspnf::testing::read_bytes(b / "final.ckpt"));
  }

  TEST_CASE("non-finite ground truth stops training") {
    Dataset d = tiny_scene().dataset;
    for (auto& v : d.train) v.image.data[0] = std::numeric_limits<float>::quiet_NaN();
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.batch_rays = 200;
    CHECK_THROWS_AS(train(d, c, TrainOptions{}), Error);
  }

  TEST_CASE("log records are JSON objects") {
    const std::string s = format_log_record({7, 0.5, 21.25, 0.75, 1e-3, 2e-3});
    CHECK(s.front() == '{');
    CHECK(s.back() == '}');
    CHECK(s.find("\"step\":7") != std::string::npos);
    CHECK(s.find("\"psnr\":21.25") != std::string::npos);
  }
}
