// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/renderer.hpp"

#include "mspnf/parallel.hpp"

#include <cmath>

namespace mspnf {

QuadratureSamples sample_ray(double near, double far, int num_samples, bool stratified, std::mt19937_64& rng) {
  if (num_samples < 2) throw Error("sample_ray: need at least 2 samples");
  if (!(near < far)) throw Error("sample_ray: need near < far");
  QuadratureSamples s;
  s.depths.resize(num_samples);
  s.deltas.resize(num_samples);
  const double bin = (far - near) / num_samples;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < num_samples; ++i) {
    const double offset = stratified ? unit(rng) : 0.5;
    s.depths[i] = near + (i + offset) * bin;
  }
  for (int i = 0; i + 1 < num_samples; ++i) s.deltas[i] = s.depths[i + 1] - s.depths[i];
  s.deltas[num_samples - 1] = far - s.depths[num_samples - 1];
  return s;
}

CompositeResult composite(std::span<const Vec3> colors, std::span<const double> densities,
                          std::span<const double> deltas, const Vec3& background) {
  if (colors.size() != densities.size() || densities.size() != deltas.size()) {
    throw Error("composite: colors, densities, and deltas must have equal length");
  }
  CompositeResult r;
  r.weights.resize(colors.size());
  double transmittance = 1.0;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    const double survive = std::exp(-densities[i] * deltas[i]);
    const double alpha = 1.0 - survive;
    r.weights[i] = transmittance * alpha;
    r.pixel += r.weights[i] * colors[i];
    transmittance *= survive;
  }
  r.residual_transmittance = transmittance;
  r.pixel += transmittance * background;
  return r;
}

ad::Var trace_ray(ad::Tape& tape, const PointField& field, const FieldParameters& params, const Vec3& origin,
                  const Vec3& direction, const QuadratureSamples& samples, const Vec3& background) {
  ad::Var transmittance = tape.constant(1.0);
  const ad::Var one = transmittance;
  ad::Var pixel;
  for (std::size_t i = 0; i < samples.depths.size(); ++i) {
    const Vec3 q = origin + samples.depths[i] * direction;
    const auto valid = field.valid_scales(q);
    const auto decoded = field.decode(tape, params, q, direction, valid);
    if (!decoded) continue;  // no valid level: empty space
    const ad::Var survive = tape.exp(tape.neg(tape.scale(decoded->sigma, samples.deltas[i])));
    const ad::Var weight = tape.mul(transmittance, tape.sub(one, survive));
    const ad::Var contrib = tape.mul(tape.concat({weight, weight, weight}), decoded->color);
    pixel = pixel.valid() ? tape.add(pixel, contrib) : contrib;
    transmittance = tape.mul(transmittance, survive);
  }
  const ad::Var bg = tape.mul(tape.concat({transmittance, transmittance, transmittance}),
                              tape.constant({background.x(), background.y(), background.z()}));
  return pixel.valid() ? tape.add(pixel, bg) : bg;
}

QuadratureSamples ray_samples(const RenderOptions& options, std::size_t ray_index, double near, double far) {
  std::mt19937_64 rng(mix_seed(options.seed, ray_index));
  return sample_ray(near, far, options.num_samples, options.stratified, rng);
}

std::vector<Vec3> render_rays(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                              const RenderOptions& options) {
  field.check_parameters(params);
  std::vector<Vec3> colors(batch.size());
  parallel_for(batch.size(), options.workers, [&](std::size_t begin, std::size_t end, int) {
    ad::Tape tape;
    for (std::size_t r = begin; r < end; ++r) {
      tape.reset();
      const auto samples = ray_samples(options, r, batch.near[r], batch.far[r]);
      const ad::Var pixel =
          trace_ray(tape, field, params, batch.origins[r], batch.directions[r], samples, options.background);
      const auto v = tape.value(pixel);
      colors[r] = Vec3(v[0], v[1], v[2]);
    }
  });
  return colors;
}

Image render_image(const Camera& camera, const PointField& field, const FieldParameters& params,
                   const RenderOptions& options) {
  const RayBatch batch = generate_all_rays(camera);
  const auto colors = render_rays(batch, field, params, options);
  Image image(camera.width, camera.height);
  for (std::size_t i = 0; i < colors.size(); ++i) image.set_pixel(i, colors[i].cwiseMax(0.0).cwiseMin(1.0));
  return image;
}

namespace {

ad::Var ray_loss(ad::Tape& tape, ad::Var pixel, const Vec3& gt, double scale) {
  const ad::Var diff = tape.sub(pixel, tape.constant({gt.x(), gt.y(), gt.z()}));
  return tape.scale(tape.dot(diff, diff), scale);
}

}  // namespace

LossAndGradient loss_and_gradient(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                                  const RenderOptions& options) {
  field.check_parameters(params);
  if (batch.gt_colors.size() != batch.size()) throw Error("loss_and_gradient: batch lacks ground-truth colors");
  const std::size_t n = batch.size();
  const double scale = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;

  LossAndGradient out;
  out.colors.resize(n);
  std::vector<double> losses(n, 0.0);
  std::vector<ad::GradientRecord> records(n);
  parallel_for(n, options.workers, [&](std::size_t begin, std::size_t end, int) {
    ad::Tape tape;
    for (std::size_t r = begin; r < end; ++r) {
      tape.reset();
      const auto samples = ray_samples(options, r, batch.near[r], batch.far[r]);
      const ad::Var pixel =
          trace_ray(tape, field, params, batch.origins[r], batch.directions[r], samples, options.background);
      const ad::Var loss = ray_loss(tape, pixel, batch.gt_colors[r], scale);
      const auto v = tape.value(pixel);
      out.colors[r] = Vec3(v[0], v[1], v[2]);
      losses[r] = tape.scalar(loss);
      tape.backward(loss);
      tape.collect_gradients(records[r]);
    }
  });

  for (double l : losses) out.loss += l;
  out.gradient = params.zeros_like();
  // Each tensor is owned by one worker; every element sums rays in order.
  const int workers = std::max(1, options.workers);
  parallel_for(static_cast<std::size_t>(workers), workers, [&](std::size_t wb, std::size_t we, int) {
    for (const auto& rec : records) {
      for (const auto& block : rec.blocks) {
        const auto owner = block.tensor % static_cast<std::uint32_t>(workers);
        if (owner < wb || owner >= we) continue;
        double* dst = out.gradient.tensors[block.tensor].values.data() + block.offset;
        const double* src = rec.data.data() + block.data;
        for (std::size_t i = 0; i < block.length; ++i) dst[i] += src[i];
      }
    }
  });
  return out;
}

double batch_loss(const RayBatch& batch, const PointField& field, const FieldParameters& params,
                  const RenderOptions& options) {
  if (batch.gt_colors.size() != batch.size()) throw Error("batch_loss: batch lacks ground-truth colors");
  const auto colors = render_rays(batch, field, params, options);
  const double scale = batch.size() > 0 ? 1.0 / static_cast<double>(batch.size()) : 0.0;
  double loss = 0.0;
  for (std::size_t r = 0; r < colors.size(); ++r) loss += (colors[r] - batch.gt_colors[r]).squaredNorm() * scale;
  return loss;
}

}  // namespace mspnf
