// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Ray quadrature, alpha compositing, and batched differentiable rendering.
#pragma once

#include "mspnf/field.hpp"
#include "mspnf/scene_io.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mspnf {

struct QuadratureSamples {
  std::vector<double> depths;
  /// delta_i = t_{i+1} - t_i, with the last segment closing at `far`.
  std::vector<double> deltas;
};

/// num_samples equal bins over [near, far]: one uniform draw per bin when
/// stratified, otherwise the bin midpoints.
QuadratureSamples sample_ray(double near, double far, int num_samples, bool stratified, std::mt19937_64& rng);

struct CompositeResult {
  Vec3 pixel = Vec3::Zero();
  std::vector<double> weights;
  double residual_transmittance = 1.0;
};

/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
/// pixel = sum_i T_i alpha_i c_i + T_residual * background.
CompositeResult composite(std::span<const Vec3> colors, std::span<const double> densities,
                          std::span<const double> deltas, const Vec3& background);

struct RenderOptions {
  int num_samples = 64;
  Vec3 background = Vec3::Ones();
  bool stratified = false;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Records one ray on `tape` and returns its pixel color (3-vector).
ad::Var trace_ray(ad::Tape& tape, const PointField& field, const FieldParameters& params, const Vec3& origin,
                  const Vec3& direction, const QuadratureSamples& samples, const Vec3& background);

/// Quadrature for ray `ray_index` of a batch; the RNG stream depends only on
/// (options.seed, ray_index).
QuadratureSamples ray_samples(const RenderOptions& options, std::size_t ray_index, double near, double far);

std::vector<Vec3> render_rays(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                              const RenderOptions& options);

Image render_image(const Camera& camera, const PointField& field, const FieldParameters& params,
                   const RenderOptions& options);

struct LossAndGradient {
  /// mean over rays of ||C_gt - C||^2
  double loss = 0.0;
  FieldParameters gradient;
  std::vector<Vec3> colors;
};

/// Loss and its exact gradient. Per-ray gradients are reduced in ray order, so
/// the result is bit-identical for any worker count.
LossAndGradient loss_and_gradient(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                                  const RenderOptions& options);

/// Forward-only version of the same loss.
double batch_loss(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                  const RenderOptions& options);

}  // namespace mspnf
