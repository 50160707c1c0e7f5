// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/cli.hpp"

#include "mspnf/config.hpp"
#include "mspnf/harness.hpp"
#include "mspnf/hierarchy.hpp"
#include "mspnf/metrics.hpp"
#include "mspnf/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace mspnf {

namespace {

/// Bad flags, config keys, or override syntax: exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

constexpr const char* kSubcommands[] = {"gen-scene", "subsample", "train", "render", "eval", "ablate"};

std::string subcommand_list() {
  std::string s;
  for (const char* c : kSubcommands) s += (s.empty() ? "" : ", ") + std::string(c);
  return s;
}

bool has_key(const std::vector<KeyValue>& kvs, const std::string& key) {
  for (const auto& kv : kvs) {
    if (kv.key == key) return true;
  }
  return false;
}

/// File text and key=value overrides, with MSPNF_SEED as the seed of last resort.
std::pair<std::string, std::vector<KeyValue>> gather_config(const std::string& path,
                                                            const std::vector<std::string>& overrides) {
  const std::string text = path.empty() ? std::string() : read_text_file(path);
  std::vector<KeyValue> kvs;
  try {
    for (const auto& o : overrides) kvs.push_back(parse_override(o));
    const auto file_entries = parse_key_values(text, path);
    if (!has_key(file_entries, "seed") && !has_key(kvs, "seed")) {
      if (const char* env = std::getenv("MSPNF_SEED"); env && *env) kvs.insert(kvs.begin(), {"seed", env, 0});
    }
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  return {text, kvs};
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<int> workers) {
  auto [text, kvs] = gather_config(path, overrides);
  if (workers) kvs.push_back({"workers", std::to_string(*workers), 0});
  try {
    return resolve_config(text, kvs);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void require_flag(bool present, const std::string& flag, const std::string& command) {
  if (!present) throw UsageError(command + ": " + flag + " is required");
}

std::string format_edge(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string metrics_json(const EvalResult& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "{\"psnr\": %.6f, \"ssim\": %.6f, \"views\": %zu}", r.psnr, r.ssim,
                r.view_psnr.size());
  return buf;
}

Image load_prediction(const std::filesystem::path& dir, std::size_t i) {
  char stem[16];
  std::snprintf(stem, sizeof(stem), "%03zu", i);
  const auto f32 = dir / (std::string(stem) + ".f32img");
  if (std::filesystem::exists(f32)) return load_f32img(f32);
  return load_ppm(dir / (std::string(stem) + ".ppm"));
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  if (argc >= 2 && argv[1][0] != '-') {
    const std::string sub = argv[1];
    bool known = false;
    for (const char* c : kSubcommands) known = known || sub == c;
    if (!known) {
      err << "error: unknown subcommand '" << sub << "' (valid: " << subcommand_list() << ")\n";
      return kExitUsage;
    }
  }

  CLI::App app{"Multi-scale point radiance fields: scene generation, training, rendering, evaluation"};
  app.name("mspnf");
  app.require_subcommand(1);

  RunConfig defaults;
  const std::string config_doc = "Configuration keys (defaults shown):\n" + make_schema(defaults).documentation();
  SceneSpec default_spec;
  const std::string spec_doc = "Scene spec keys (defaults shown):\n" + make_scene_schema(default_spec).documentation();

  std::vector<std::string> overrides;
  std::optional<int> workers;
  bool print_config = false;

  // gen-scene
  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic scene (images, cameras, points)");
  gen->add_option("--spec", spec_path, "scene spec file (key = value)");
  gen->add_option("--out", out_dir, "output scene directory");
  gen->add_flag("--print-config", print_config, "print the resolved spec and exit");
  gen->add_option("overrides", overrides, "key=value spec overrides");
  gen->footer(spec_doc);

  // subsample
  std::string in_ply;
  double omega = 0.0, gamma = 0.0;
  int levels = 4;
  auto* sub = app.add_subcommand("subsample", "Build and dump the multi-scale point hierarchy");
  sub->add_option("--in", in_ply, "input PLY point cloud");
  sub->add_option("--omega", omega, "finest voxel edge (default: automatic)");
  sub->add_option("--gamma", gamma, "edge growth per level (default: automatic)");
  sub->add_option("--levels", levels, "number of local levels");
  sub->add_option("--out", out_dir, "output directory");

  // train
  std::string scene_dir, config_path, resume;
  auto* tr = app.add_subcommand("train", "Train a field on a scene");
  tr->add_option("--scene", scene_dir, "scene directory");
  tr->add_option("--config", config_path, "config file (key = value)");
  tr->add_option("--out", out_dir, "output run directory");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--workers", workers, "worker threads (default: all cores)");
  tr->add_flag("--print-config", print_config, "print the resolved config and exit");
  tr->add_option("overrides", overrides, "key=value config overrides");
  tr->footer(config_doc);

  // render
  std::string checkpoint, camera_path, out_image;
  std::optional<int> samples;
  auto* rd = app.add_subcommand("render", "Render a checkpoint from a camera pose");
  rd->add_option("--checkpoint", checkpoint, "checkpoint file");
  rd->add_option("--camera", camera_path, "camera file (one line of 20 numbers)");
  rd->add_option("--out", out_image, "output image (.ppm or .f32img)");
  rd->add_option("--samples", samples, "quadrature samples per ray (default: from checkpoint)");
  rd->add_option("--workers", workers, "worker threads");

  // eval
  std::string split = "test", predictions, metrics_out;
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM on held-out views");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--scene", scene_dir, "scene directory");
  ev->add_option("--split", split, "test | train")->check(CLI::IsMember({"test", "train"}));
  ev->add_option("--predictions", predictions, "directory of NNN.f32img/.ppm images to score instead of rendering");
  ev->add_option("--out", metrics_out, "also write the metrics JSON here");
  ev->add_option("--workers", workers, "worker threads");

  // ablate
  std::string grid, out_csv;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of config variants");
  ab->add_option("--scene", scene_dir, "scene directory");
  ab->add_option("--grid", grid, "grid file (name key=value ...) or built-in: scales, global, ratio, representation");
  ab->add_option("--config", config_path, "base config file");
  ab->add_option("--out", out_csv, "output CSV");
  ab->add_option("--workers", workers, "worker threads");
  ab->add_flag("--print-config", print_config, "print the resolved base config and exit");
  ab->add_option("overrides", overrides, "key=value overrides of the base config");
  ab->footer(config_doc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      auto [text, kvs] = gather_config(spec_path, overrides);
      SceneSpec spec;
      try {
        spec = resolve_scene_spec(text, kvs);
      } catch (const ParseError& e) {
        throw UsageError(e.what());
      }
      if (print_config) {
        out << make_scene_schema(spec).dump();
        return kExitOk;
      }
      require_flag(!out_dir.empty(), "--out", "gen-scene");
      const SyntheticScene scene = generate_scene(spec);
      save_scene(out_dir, scene);
      out << "scene: " << scene.dataset.cloud.count() << " points (" << format_double(scene.removed_fraction)
          << " removed by " << scene.holes.size() << " holes), " << scene.dataset.train.size() << " train / "
          << scene.dataset.test.size() << " test views\n";
    } else if (sub->parsed()) {
      require_flag(!in_ply.empty(), "--in", "subsample");
      require_flag(!out_dir.empty(), "--out", "subsample");
      if (levels < 0) throw UsageError("subsample: --levels must be >= 0");
      const PointCloud cloud = load_point_cloud(in_ply);
      HierarchyConfig hc;
      hc.num_local_levels = levels;
      hc.omega = omega;
      hc.gamma = gamma;
      const PointHierarchy h = make_hierarchy(hc, cloud);
      dump_hierarchy(h, out_dir);
      for (const auto& level : h.levels) {
        out << "level " << level.level_index << ": edge " << format_edge(level.voxel_edge) << ", " << level.size()
            << " points\n";
      }
    } else if (tr->parsed()) {
      const RunConfig config = load_run_config(config_path, overrides, workers);
      if (print_config) {
        RunConfig copy = config;
        out << make_schema(copy).dump();
        return kExitOk;
      }
      require_flag(!scene_dir.empty(), "--scene", "train");
      require_flag(!out_dir.empty(), "--out", "train");
      const Dataset dataset = load_dataset(scene_dir);
      RunConfig copy = config;
      write_text(std::filesystem::path(out_dir) / "config.txt", make_schema(copy).dump());
      TrainOptions options;
      options.out_dir = out_dir;
      options.workers = resolve_workers(config.workers);
      if (!resume.empty()) options.resume = resume;
      options.on_log = [&](const LogRecord& r) { out << format_log_record(r) << '\n' << std::flush; };
      train(dataset, config, options);
    } else if (rd->parsed()) {
      require_flag(!checkpoint.empty(), "--checkpoint", "render");
      require_flag(!camera_path.empty(), "--camera", "render");
      require_flag(!out_image.empty(), "--out", "render");
      const Model model = load_model(checkpoint);
      RenderOptions options = eval_render_options(model.config, resolve_workers(workers.value_or(0)));
      if (samples) {
        if (*samples < 2) throw UsageError("render: --samples must be >= 2");
        options.num_samples = *samples;
      }
      save_image(out_image, render_image(load_camera(camera_path), *model.field, model.params, options));
    } else if (ev->parsed()) {
      require_flag(!scene_dir.empty(), "--scene", "eval");
      require_flag(!checkpoint.empty() || !predictions.empty(), "--checkpoint or --predictions", "eval");
      const Dataset dataset = load_dataset(scene_dir);
      const auto& views = split == "train" ? dataset.train : dataset.test;
      if (views.empty()) throw Error("eval: scene has no " + split + " views");
      EvalResult result;
      if (!predictions.empty()) {
        for (std::size_t i = 0; i < views.size(); ++i) {
          const Image pred = load_prediction(predictions, i);
          result.view_psnr.push_back(psnr(pred, views[i].image));
          result.view_ssim.push_back(ssim(pred, views[i].image));
          result.psnr += result.view_psnr.back() / views.size();
          result.ssim += result.view_ssim.back() / views.size();
        }
      } else {
        result = evaluate(load_model(checkpoint), views, resolve_workers(workers.value_or(0)));
      }
      const std::string json = metrics_json(result);
      out << json << '\n';
      if (!metrics_out.empty()) write_text(metrics_out, json + "\n");
    } else if (ab->parsed()) {
      const RunConfig config = load_run_config(config_path, overrides, workers);
      if (print_config) {
        RunConfig copy = config;
        out << make_schema(copy).dump();
        return kExitOk;
      }
      require_flag(!scene_dir.empty(), "--scene", "ablate");
      require_flag(!grid.empty(), "--grid", "ablate");
      require_flag(!out_csv.empty(), "--out", "ablate");
      std::vector<AblationVariant> variants;
      try {
        variants = parse_grid(std::filesystem::exists(grid) ? read_text_file(grid) : grid);
      } catch (const ParseError& e) {
        throw UsageError(e.what());
      }
      const Dataset dataset = load_dataset(scene_dir);
      RunConfig copy = config;
      write_text(out_csv + ".config.txt", make_schema(copy).dump());
      const auto rows = run_ablation(dataset, config, variants, resolve_workers(config.workers));
      const std::string csv = format_ablation_csv(rows);
      write_text(out_csv, csv);
      out << csv;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace mspnf
