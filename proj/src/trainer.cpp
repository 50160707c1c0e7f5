// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/trainer.hpp"

#include "mspnf/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace mspnf {

namespace {

// Independent RNG streams derived from the run seed.
constexpr std::uint64_t kBatchStream = 0x6261746368ULL;
constexpr std::uint64_t kJitterStream = 0x6a6974746572ULL;
constexpr std::uint64_t kSubsetStream = 0x737562736574ULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;

std::vector<std::uint64_t> to_shape(const std::vector<std::size_t>& s) { return {s.begin(), s.end()}; }

}  // namespace

OptimizerState make_optimizer_state(const FieldParameters& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

LearningRates lr_at(std::uint64_t step, const TrainConfig& config) {
  double exponent = static_cast<double>(step) / config.decay_every;
  if (config.decay_mode == "step") exponent = std::floor(exponent);
  const double factor = std::pow(config.decay_rate, exponent);
  return {config.lr_decoder * factor, config.lr_features * factor};
}

void check_finite_gradient(const FieldParameters& grads) {
  for (const auto& t : grads.tensors) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (!std::isfinite(t.values[i])) {
        throw Error("non-finite gradient in parameter '" + t.name + "' at element " + std::to_string(i));
      }
    }
  }
}

void adam_step(FieldParameters& params, const FieldParameters& grads, OptimizerState& state,
               const LearningRates& lr, const TrainConfig& config) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw Error("adam_step: parameter, gradient, and moment layouts differ");
  }
  check_finite_gradient(grads);
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k].values;
    const auto& g = grads.tensors[k].values;
    auto& m = state.m.tensors[k].values;
    auto& v = state.v.tensors[k].values;
    const double rate = lr.for_group(params.tensors[k].group);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

void sgd_step(FieldParameters& params, const FieldParameters& grads, OptimizerState& state, const LearningRates& lr) {
  if (!params.same_layout(grads)) throw Error("sgd_step: parameter and gradient layouts differ");
  check_finite_gradient(grads);
  ++state.step;
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k].values;
    const auto& g = grads.tensors[k].values;
    const double rate = lr.for_group(params.tensors[k].group);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= rate * g[i];
  }
}

// ---------------------------------------------------------------------------
// Model construction and checkpoints

PointCloud subset_points(const PointCloud& cloud, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("point ratio must lie in [0, 1]");
  if (ratio == 1.0) return cloud;
  const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cloud.count())));
  std::vector<std::size_t> order(cloud.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, kSubsetStream));
  // Fisher-Yates with an explicit draw so the result is library independent.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PointCloud out;
  out.positions.reserve(keep);
  for (auto i : order) out.positions.push_back(cloud.positions[i]);
  return out;
}

Model build_model(const RunConfig& config, const PointCloud& cloud) {
  config.validate();
  const CanonicalFrame frame = make_frame(config.hierarchy, cloud);
  const Schedule schedule = resolve_schedule(config.hierarchy, cloud);
  const PointCloud kept = subset_points(cloud, config.train.point_ratio, config.train.seed);
  PointHierarchy hierarchy =
      build_hierarchy(kept, schedule.omega, schedule.gamma, config.hierarchy.num_local_levels);
  Model model;
  model.config = config;
  model.field = std::make_shared<const PointField>(config.field, std::move(hierarchy), frame);
  model.params = model.field->init_parameters(mix_seed(config.train.seed, kInitStream));
  return model;
}

std::string checkpoint_config_text(const RunConfig& config) {
  RunConfig copy = config;
  copy.workers = 0;
  return make_schema(copy).dump();
}

CheckpointFile pack_checkpoint(const Model& model, const OptimizerState* state) {
  CheckpointFile file;
  file.config_text = checkpoint_config_text(model.config);
  file.step = state ? state->step : 0;

  const auto& frame = model.field->frame();
  NamedTensor f{"geometry.frame", {16}, {}};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) f.values.push_back(frame.rotation(r, c));
  }
  for (int k = 0; k < 3; ++k) f.values.push_back(frame.translation(k));
  for (int k = 0; k < 3; ++k) f.values.push_back(frame.scale(k));
  f.values.push_back(frame.rank);
  file.tensors.push_back(std::move(f));

  const auto& h = model.field->hierarchy();
  file.tensors.push_back({"geometry.schedule", {2}, {h.schedule.omega, h.schedule.gamma}});
  file.tensors.push_back(
      {"geometry.global_center", {3}, {h.global_center.x(), h.global_center.y(), h.global_center.z()}});
  for (const auto& level : h.levels) {
    const std::string prefix = "geometry.level" + std::to_string(level.level_index);
    NamedTensor pts{prefix + ".points", {level.size(), 3}, {}};
    NamedTensor counts{prefix + ".counts", {level.size()}, {}};
    for (std::size_t i = 0; i < level.size(); ++i) {
      for (int k = 0; k < 3; ++k) pts.values.push_back(level.representatives[i](k));
      counts.values.push_back(static_cast<double>(level.source_counts[i]));
    }
    file.tensors.push_back(std::move(pts));
    file.tensors.push_back(std::move(counts));
  }

  for (const auto& t : model.params.tensors) file.tensors.push_back({t.name, to_shape(t.shape), t.values});
  if (state) {
    for (const auto& t : state->m.tensors) file.tensors.push_back({"adam.m." + t.name, to_shape(t.shape), t.values});
    for (const auto& t : state->v.tensors) file.tensors.push_back({"adam.v." + t.name, to_shape(t.shape), t.values});
  }
  return file;
}

namespace {

const NamedTensor& require(const CheckpointFile& file, const std::string& name, std::size_t size) {
  const NamedTensor* t = file.find(name);
  if (!t) throw ParseError("checkpoint: missing tensor '" + name + "'");
  if (t->values.size() != size) throw ParseError("checkpoint: tensor '" + name + "' has the wrong size");
  return *t;
}

void fill_from(const CheckpointFile& file, const std::string& prefix, FieldParameters& params) {
  for (auto& t : params.tensors) {
    const auto& src = require(file, prefix + t.name, t.values.size());
    if (src.shape != to_shape(t.shape)) throw ParseError("checkpoint: tensor '" + prefix + t.name + "' shape mismatch");
    t.values = src.values;
  }
}

}  // namespace

Model unpack_model(const CheckpointFile& file) {
  Model model;
  model.config = resolve_config(file.config_text, {});

  const auto& f = require(file, "geometry.frame", 16).values;
  CanonicalFrame frame;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) frame.rotation(r, c) = f[r * 3 + c];
  }
  frame.translation = Vec3(f[9], f[10], f[11]);
  frame.scale = Vec3(f[12], f[13], f[14]);
  frame.rank = static_cast<int>(f[15]);

  PointHierarchy h;
  const auto& sched = require(file, "geometry.schedule", 2).values;
  h.schedule = {sched[0], sched[1]};
  const auto& gc = require(file, "geometry.global_center", 3).values;
  h.global_center = Vec3(gc[0], gc[1], gc[2]);
  for (int s = 1; s <= model.config.hierarchy.num_local_levels; ++s) {
    const std::string prefix = "geometry.level" + std::to_string(s);
    const NamedTensor* pts = file.find(prefix + ".points");
    if (!pts || pts->shape.size() != 2 || pts->shape[1] != 3) {
      throw ParseError("checkpoint: missing or malformed '" + prefix + ".points'");
    }
    const std::size_t n = pts->shape[0];
    const auto& counts = require(file, prefix + ".counts", n).values;
    ScaleLevel level;
    level.level_index = s;
    level.voxel_edge = h.schedule.edge(s);
    for (std::size_t i = 0; i < n; ++i) {
      level.representatives.emplace_back(pts->values[i * 3], pts->values[i * 3 + 1], pts->values[i * 3 + 2]);
      level.source_counts.push_back(static_cast<std::size_t>(counts[i]));
    }
    h.levels.push_back(std::move(level));
  }

  model.field = std::make_shared<const PointField>(model.config.field, std::move(h), frame);
  model.params = model.field->make_layout();
  fill_from(file, "", model.params);
  return model;
}

OptimizerState unpack_optimizer(const CheckpointFile& file, const Model& model) {
  OptimizerState state = make_optimizer_state(model.params);
  fill_from(file, "adam.m.", state.m);
  fill_from(file, "adam.v.", state.v);
  state.step = file.step;
  return state;
}

Model load_model(const std::filesystem::path& path) { return unpack_model(read_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Evaluation and logging

RenderOptions eval_render_options(const RunConfig& config, int workers) {
  RenderOptions o;
  o.num_samples = config.render.num_samples;
  o.background = config.render.background;
  o.stratified = false;
  o.workers = workers;
  return o;
}

EvalResult evaluate(const Model& model, const std::vector<View>& views, int workers) {
  if (views.empty()) throw Error("evaluate: no views");
  EvalResult r;
  const RenderOptions options = eval_render_options(model.config, workers);
  for (const auto& view : views) {
    const Image rendered = render_image(view.camera, *model.field, model.params, options);
    r.view_psnr.push_back(psnr(rendered, view.image));
    r.view_ssim.push_back(ssim(rendered, view.image));
  }
  const double n = static_cast<double>(views.size());
  r.psnr = std::accumulate(r.view_psnr.begin(), r.view_psnr.end(), 0.0) / n;
  r.ssim = std::accumulate(r.view_ssim.begin(), r.view_ssim.end(), 0.0) / n;
  return r;
}

std::string format_log_record(const LogRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["loss"] = record.loss;
  j["psnr"] = record.psnr;
  j["ssim"] = record.ssim;
  j["lr_decoder"] = record.lr_decoder;
  j["lr_features"] = record.lr_features;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::filesystem::path step_checkpoint_path(const std::filesystem::path& dir, std::uint64_t step) {
  char name[32];
  std::snprintf(name, sizeof(name), "step_%06llu.ckpt", static_cast<unsigned long long>(step));
  return dir / name;
}

RayBatch training_pool(const Dataset& dataset) {
  RayBatch pool;
  for (const auto& view : dataset.train) {
    RayBatch rays = generate_all_rays(view.camera);
    for (std::size_t i = 0; i < rays.size(); ++i) {
      pool.origins.push_back(rays.origins[i]);
      pool.directions.push_back(rays.directions[i]);
      pool.near.push_back(rays.near[i]);
      pool.far.push_back(rays.far[i]);
      pool.gt_colors.push_back(view.image.pixel(i));
    }
  }
  return pool;
}

}  // namespace

TrainResult train(const Dataset& dataset, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.train.empty()) throw Error("train: scene has no training views");
  const TrainConfig& tc = config.train;

  TrainResult result;
  if (options.resume) {
    const CheckpointFile file = read_checkpoint(*options.resume);
    result.model = unpack_model(file);
    result.state = unpack_optimizer(file, result.model);
    result.model.config = config;
    result.model.field->check_parameters(result.model.params);
  } else {
    result.model = build_model(config, dataset.cloud);
    result.state = make_optimizer_state(result.model.params);
  }
  Model& model = result.model;
  OptimizerState& state = result.state;

  const bool write_files = !options.out_dir.empty();
  std::ofstream log_file;
  if (write_files) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw Error("cannot write log in '" + options.out_dir.string() + "'");
  }

  const std::vector<View>& eval_views = dataset.test.empty() ? dataset.train : dataset.test;
  double loss_since_log = 0.0;
  std::size_t steps_since_log = 0;
  auto record = [&](std::uint64_t step) {
    const EvalResult e = evaluate(model, eval_views, options.workers);
    const LearningRates lr = lr_at(step, tc);
    LogRecord rec{step, steps_since_log ? loss_since_log / steps_since_log : 0.0, e.psnr, e.ssim, lr.decoder,
                  lr.features};
    loss_since_log = 0.0;
    steps_since_log = 0;
    result.log.push_back(rec);
    result.final_eval = e;
    if (write_files) log_file << format_log_record(rec) << '\n' << std::flush;
    if (options.on_log) options.on_log(rec);
  };

  const RayBatch pool = training_pool(dataset);
  const auto batch_size = static_cast<std::size_t>(tc.batch_rays);
  std::uint64_t last_recorded = static_cast<std::uint64_t>(-1);

  while (state.step < static_cast<std::uint64_t>(tc.iterations)) {
    const std::uint64_t step = state.step;
    std::mt19937_64 rng(mix_seed(tc.seed, step, kBatchStream));
    RayBatch batch;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t k = static_cast<std::size_t>(rng() % pool.size());
      batch.origins.push_back(pool.origins[k]);
      batch.directions.push_back(pool.directions[k]);
      batch.near.push_back(pool.near[k]);
      batch.far.push_back(pool.far[k]);
      batch.gt_colors.push_back(pool.gt_colors[k]);
    }
    RenderOptions ro;
    ro.num_samples = config.render.num_samples;
    ro.background = config.render.background;
    ro.stratified = true;
    ro.seed = mix_seed(tc.seed, step, kJitterStream);
    ro.workers = options.workers;

    const LossAndGradient lg = loss_and_gradient(batch, *model.field, model.params, ro);
    if (!std::isfinite(lg.loss)) {
      throw Error("non-finite loss at step " + std::to_string(step) + "; last checkpoint retained");
    }
    const LearningRates lr = lr_at(step, tc);
    if (tc.optimizer == "sgd") {
      sgd_step(model.params, lg.gradient, state, lr);
    } else {
      adam_step(model.params, lg.gradient, state, lr, tc);
    }
    result.losses.push_back(lg.loss);
    loss_since_log += lg.loss;
    ++steps_since_log;

    if (write_files && tc.checkpoint_every > 0 && state.step % tc.checkpoint_every == 0) {
      write_checkpoint(step_checkpoint_path(options.out_dir, state.step), pack_checkpoint(model, &state));
    }
    if (tc.eval_every > 0 && state.step % tc.eval_every == 0) {
      record(state.step);
      last_recorded = state.step;
    }
  }

  if (last_recorded != state.step) record(state.step);
  if (write_files) write_checkpoint(options.out_dir / "final.ckpt", pack_checkpoint(model, &state));
  return result;
}

}  // namespace mspnf
