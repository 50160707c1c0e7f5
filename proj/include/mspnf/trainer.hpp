// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Optimization of the photometric loss: Adam, the learning-rate schedule,
// batching, checkpoints, and the JSON-lines run log.
#pragma once

#include "mspnf/checkpoint.hpp"
#include "mspnf/config.hpp"
#include "mspnf/field.hpp"
#include "mspnf/renderer.hpp"
#include "mspnf/scene_io.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mspnf {

struct OptimizerState {
  FieldParameters m;
  FieldParameters v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const FieldParameters& params);

struct LearningRates {
  double decoder = 0.0;
  double features = 0.0;

  double for_group(ParamGroup g) const { return g == ParamGroup::Decoder ? decoder : features; }
};

/// lr0 * decay_rate^(step / decay_every); "step" mode floors the exponent.
LearningRates lr_at(std::uint64_t step, const TrainConfig& config);

/// Throws Error naming the first tensor holding a non-finite gradient.
void check_finite_gradient(const FieldParameters& grads);

/// One bias-corrected Adam update; each tensor uses its group's rate.
void adam_step(FieldParameters& params, const FieldParameters& grads, OptimizerState& state,
               const LearningRates& lr, const TrainConfig& config);

/// Plain gradient descent, for comparison runs.
void sgd_step(FieldParameters& params, const FieldParameters& grads, OptimizerState& state, const LearningRates& lr);

/// Field structure plus its parameters.
struct Model {
  RunConfig config;
  std::shared_ptr<const PointField> field;
  FieldParameters params;
};

/// Keeps round(ratio * N) points chosen by a seeded shuffle, in input order.
PointCloud subset_points(const PointCloud& cloud, double ratio, std::uint64_t seed);

/// Frame and voxel schedule come from the full cloud; the hierarchy is built
/// from the `point_ratio` subset. Parameters are freshly initialized.
Model build_model(const RunConfig& config, const PointCloud& cloud);

/// Config text stored in checkpoints: the resolved config without run-only keys.
std::string checkpoint_config_text(const RunConfig& config);

CheckpointFile pack_checkpoint(const Model& model, const OptimizerState* state);
/// Rebuilds the model from stored geometry (no re-clustering).
Model unpack_model(const CheckpointFile& file);
OptimizerState unpack_optimizer(const CheckpointFile& file, const Model& model);
Model load_model(const std::filesystem::path& path);

RenderOptions eval_render_options(const RunConfig& config, int workers);

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<double> view_psnr;
  std::vector<double> view_ssim;
};

/// Mean PSNR/SSIM over `views` using midpoint quadrature.
EvalResult evaluate(const Model& model, const std::vector<View>& views, int workers);

struct LogRecord {
  std::uint64_t step = 0;
  /// Mean training loss since the previous record.
  double loss = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double lr_decoder = 0.0;
  double lr_features = 0.0;
};

std::string format_log_record(const LogRecord& record);

struct TrainOptions {
  /// Empty: keep everything in memory.
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  int workers = 1;
  std::function<void(const LogRecord&)> on_log;
};

struct TrainResult {
  Model model;
  OptimizerState state;
  /// Training loss of each iteration run by this call, in order.
  std::vector<double> losses;
  std::vector<LogRecord> log;
  EvalResult final_eval;
};

/// Minimizes the mean squared pixel error over random pixel batches drawn with
/// replacement from all training views. Batches and quadrature jitter depend
/// only on (seed, step), so results do not depend on `workers` and a resumed
/// run continues the same trajectory.
///
/// Files under out_dir: step_NNNNNN.ckpt at the checkpoint cadence,
/// final.ckpt, and log.jsonl with one record per evaluation.
TrainResult train(const Dataset& dataset, const RunConfig& config, const TrainOptions& options);

}  // namespace mspnf
