// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace mspnf {

// ---------------------------------------------------------------------------
// FieldParameters

std::uint32_t FieldParameters::add(std::string name, std::vector<std::size_t> shape, ParamGroup group) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  tensors.push_back({std::move(name), std::move(shape), group, std::vector<double>(n, 0.0)});
  return static_cast<std::uint32_t>(tensors.size() - 1);
}

std::uint32_t FieldParameters::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return static_cast<std::uint32_t>(i);
  }
  throw Error("no parameter tensor named '" + name + "'");
}

std::size_t FieldParameters::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

bool FieldParameters::same_layout(const FieldParameters& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.name != b.name || a.shape != b.shape || a.group != b.group || a.values.size() != b.values.size()) {
      return false;
    }
  }
  return true;
}

FieldParameters FieldParameters::zeros_like() const {
  FieldParameters out;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, t.group, std::vector<double>(t.values.size())});
  return out;
}

// ---------------------------------------------------------------------------
// Encodings and interpolation

std::vector<double> positional_encoding(std::span<const double> x, int num_frequencies) {
  std::vector<double> out;
  out.reserve(x.size() * 2 * static_cast<std::size_t>(num_frequencies));
  for (int k = 0; k < num_frequencies; ++k) {
    const double f = std::ldexp(std::numbers::pi, k);
    for (double v : x) out.push_back(std::sin(f * v));
    for (double v : x) out.push_back(std::cos(f * v));
  }
  return out;
}

std::vector<double> inverse_distance_weights(std::span<const double> distances, double epsilon) {
  std::vector<double> w(distances.size());
  double total = 0.0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    w[i] = 1.0 / (distances[i] + epsilon);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

void bilinear_terms(double a, double b, int res, std::size_t base, std::size_t dim, double weight,
                    std::vector<ad::GatherTerm>& out) {
  auto locate = [res](double coord, int& i0, double& t) {
    const double x = (std::clamp(coord, -1.0, 1.0) + 1.0) * 0.5 * (res - 1);
    i0 = std::min(static_cast<int>(std::floor(x)), res - 2);
    t = x - i0;
  };
  int i0, j0;
  double ta, tb;
  locate(a, i0, ta);
  locate(b, j0, tb);
  auto at = [&](int i, int j) { return base + (static_cast<std::size_t>(j) * res + i) * dim; };
  const double w00 = (1.0 - ta) * (1.0 - tb);
  const double w10 = ta * (1.0 - tb);
  const double w01 = (1.0 - ta) * tb;
  const double w11 = ta * tb;
  if (w00 != 0.0) out.push_back({at(i0, j0), weight * w00});
  if (w10 != 0.0) out.push_back({at(i0 + 1, j0), weight * w10});
  if (w01 != 0.0) out.push_back({at(i0, j0 + 1), weight * w01});
  if (w11 != 0.0) out.push_back({at(i0 + 1, j0 + 1), weight * w11});
}

std::size_t triplane_stack_size(std::span<const int> pyramid, std::size_t dim) {
  std::size_t cells = 0;
  for (int r : pyramid) cells += static_cast<std::size_t>(r) * r;
  return 3 * cells * dim;
}

void triplane_terms(const Vec3& u, std::span<const int> pyramid, std::size_t base, std::size_t dim,
                    std::vector<ad::GatherTerm>& out) {
  // XY reads (x, y), YZ reads (y, z), XZ reads (x, z).
  const std::array<std::array<int, 2>, 3> axes{{{0, 1}, {1, 2}, {0, 2}}};
  std::size_t offset = base;
  for (const auto& ax : axes) {
    for (int r : pyramid) {
      bilinear_terms(u(ax[0]), u(ax[1]), r, offset, dim, 1.0, out);
      offset += static_cast<std::size_t>(r) * r * dim;
    }
  }
}

// ---------------------------------------------------------------------------
// PointField

PointField::PointField(FieldConfig config, PointHierarchy hierarchy, CanonicalFrame frame)
    : config_(std::move(config)), hierarchy_(std::move(hierarchy)), frame_(frame) {
  indices_ = build_indices(hierarchy_);
  const int levels = num_local_levels();
  const auto dim = static_cast<std::size_t>(config_.feature_dim);
  for (int s = 1; s <= levels; ++s) {
    kinds_.push_back(s > levels - config_.triplane_levels ? LevelKind::PointTriplane : LevelKind::PointMlp);
  }
  point_stack_size_ = triplane_stack_size(config_.point_triplane_res, dim);
  const int global_res[] = {config_.global_triplane_res};
  global_stack_size_ = triplane_stack_size(global_res, dim);

  auto add_linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    LinearIds ids;
    ids.in = in;
    ids.out = out;
    ids.weight = layout_.add(prefix + ".weight", {out, in}, ParamGroup::Decoder);
    ids.bias = layout_.add(prefix + ".bias", {out}, ParamGroup::Decoder);
    return ids;
  };
  auto add_mlp = [&](const std::string& prefix, std::size_t in, std::size_t width, std::size_t out, int layers) {
    std::vector<LinearIds> ids;
    for (int k = 0; k < layers; ++k) {
      const std::size_t lin = k == 0 ? in : width;
      const std::size_t lout = k == layers - 1 ? out : width;
      ids.push_back(add_linear(prefix + "." + std::to_string(k), lin, lout));
    }
    return ids;
  };

  const auto width = static_cast<std::size_t>(config_.mlp_width);
  for (int s = 1; s <= levels; ++s) {
    const auto& level = hierarchy_.levels[s - 1];
    const std::string prefix = "level" + std::to_string(s);
    LevelIds ids;
    if (kinds_[s - 1] == LevelKind::PointMlp) {
      ids.features = layout_.add(prefix + ".features", {level.size(), dim}, ParamGroup::Features);
      ids.mlp = add_mlp(prefix + ".mlp", dim + 3, width, dim, config_.mlp_layers);
    } else {
      std::size_t cells = 0;
      for (int r : config_.point_triplane_res) cells += static_cast<std::size_t>(r) * r;
      ids.features = layout_.add(prefix + ".triplane", {level.size(), 3, cells, dim}, ParamGroup::Features);
    }
    levels_.push_back(std::move(ids));
  }
  if (config_.use_global) {
    const auto r = static_cast<std::size_t>(config_.global_triplane_res);
    global_triplane_ = layout_.add("global.triplane", {3, r, r, dim}, ParamGroup::Features);
    global_proj_ = add_linear("global.proj", dim + 6 * static_cast<std::size_t>(config_.pos_freqs), dim);
  }
  density_ = add_linear("decoder.density", dim, 1);
  color_ = add_mlp("decoder.color", decoder_input_dim(), static_cast<std::size_t>(config_.decoder_width), 3,
                   config_.decoder_layers);
}

std::size_t PointField::decoder_input_dim() const {
  return static_cast<std::size_t>(config_.feature_dim) + 6 * static_cast<std::size_t>(config_.dir_freqs);
}

FieldParameters PointField::make_layout() const { return layout_.zeros_like(); }

FieldParameters PointField::init_parameters(std::uint64_t seed) const {
  FieldParameters params = make_layout();
  std::mt19937_64 rng(seed);
  for (auto& t : params.tensors) {
    const bool is_bias = t.name.ends_with(".bias");
    const bool is_weight = t.name.ends_with(".weight");
    double bound = 0.0;
    if (is_weight) {
      bound = std::sqrt(6.0 / static_cast<double>(t.shape[1]));
    } else if (t.name.ends_with(".features")) {
      bound = config_.feature_init;
    } else if (t.name.ends_with(".triplane")) {
      bound = config_.triplane_init;
    }
    if (is_bias || bound == 0.0) continue;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values) v = dist(rng);
  }
  return params;
}

void PointField::check_parameters(const FieldParameters& params) const {
  if (!params.same_layout(layout_)) {
    throw Error("configuration mismatch: parameters do not match the field layout (" +
                std::to_string(params.tensors.size()) + " tensors, expected " +
                std::to_string(layout_.tensors.size()) + ")");
  }
}

std::vector<NeighborSet> PointField::valid_scales(const Vec3& q) const {
  return mspnf::valid_scales(indices_, q, config_.tau, config_.max_neighbors, config_.use_global);
}

ad::Var PointField::linear(ad::Tape& tape, const FieldParameters& params, const LinearIds& layer, ad::Var x) const {
  const ad::Var w = tape.parameter(params.ref(layer.weight));
  const ad::Var b = tape.parameter(params.ref(layer.bias));
  return tape.add(tape.matvec(w, x, layer.out, layer.in), b);
}

ad::Var PointField::mlp(ad::Tape& tape, const FieldParameters& params, std::span<const LinearIds> layers,
                        ad::Var x) const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = linear(tape, params, layers[k], x);
    if (k + 1 < layers.size()) x = tape.relu(x);
  }
  return x;
}

ad::Var PointField::feature_fn_mlp(ad::Tape& tape, const FieldParameters& params, int level_index,
                                   std::uint32_t point, const Vec3& delta) const {
  const LevelIds& ids = levels_.at(level_index - 1);
  const auto dim = static_cast<std::size_t>(config_.feature_dim);
  const ad::GatherTerm term{static_cast<std::size_t>(point) * dim, 1.0};
  const ad::Var f = tape.gather(params.ref(ids.features), std::span(&term, 1), dim);
  const double norm = 1.0 / (config_.tau * hierarchy_.levels[level_index - 1].voxel_edge);
  const ad::Var d = tape.constant({delta.x() * norm, delta.y() * norm, delta.z() * norm});
  return mlp(tape, params, ids.mlp, tape.concat({f, d}));
}

ad::Var PointField::feature_fn_triplane(ad::Tape& tape, const FieldParameters& params, int level_index,
                                        std::uint32_t point, const Vec3& u) const {
  const LevelIds& ids = levels_.at(level_index - 1);
  thread_local std::vector<ad::GatherTerm> terms;
  terms.clear();
  triplane_terms(u, config_.point_triplane_res, static_cast<std::size_t>(point) * point_stack_size_,
                 static_cast<std::size_t>(config_.feature_dim), terms);
  return tape.gather(params.ref(ids.features), terms, static_cast<std::size_t>(config_.feature_dim));
}

ad::Var PointField::global_feature(ad::Tape& tape, const FieldParameters& params, const Vec3& q) const {
  if (!config_.use_global) throw Error("global level disabled in this configuration");
  const Vec3 x = frame_.to_canonical(q);
  thread_local std::vector<ad::GatherTerm> terms;
  terms.clear();
  const int res[] = {config_.global_triplane_res};
  triplane_terms(x, res, 0, static_cast<std::size_t>(config_.feature_dim), terms);
  const ad::Var tri = tape.gather(params.ref(global_triplane_), terms, static_cast<std::size_t>(config_.feature_dim));
  const double xc[3] = {x.x(), x.y(), x.z()};
  const auto pe = positional_encoding(xc, config_.pos_freqs);
  const ad::Var input = pe.empty() ? tri : tape.concat({tri, tape.constant(pe)});
  return linear(tape, params, global_proj_, input);
}

ad::Var PointField::aggregate_level(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                                    const NeighborSet& neighbors) const {
  if (neighbors.empty()) throw Error("aggregate_level: empty neighbor set");
  const int s = neighbors.level_index;
  const auto& level = hierarchy_.levels.at(s - 1);
  const auto weights = inverse_distance_weights(neighbors.distances, config_.epsilon);
  const double inv_radius = 1.0 / (config_.tau * level.voxel_edge);
  ad::Var acc;
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const std::uint32_t idx = neighbors.point_indices[k];
    const Vec3& p = level.representatives[idx];
    ad::Var f = kinds_[s - 1] == LevelKind::PointMlp
                    ? feature_fn_mlp(tape, params, s, idx, p - q)
                    : feature_fn_triplane(tape, params, s, idx, (q - p) * inv_radius);
    f = tape.scale(f, weights[k]);
    acc = acc.valid() ? tape.add(acc, f) : f;
  }
  return acc;
}

std::optional<ad::Var> PointField::mean_feature(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                                                std::span<const NeighborSet> valid) const {
  if (valid.empty()) return std::nullopt;
  // Fixed ascending-level summation order, independent of the caller's order.
  thread_local std::vector<const NeighborSet*> order;
  order.clear();
  for (const auto& n : valid) order.push_back(&n);
  std::sort(order.begin(), order.end(),
            [](const NeighborSet* a, const NeighborSet* b) { return a->level_index < b->level_index; });
  ad::Var acc;
  for (const NeighborSet* n : order) {
    const ad::Var f = n->level_index == 0 ? global_feature(tape, params, q) : aggregate_level(tape, params, q, *n);
    acc = acc.valid() ? tape.add(acc, f) : f;
  }
  return tape.scale(acc, 1.0 / static_cast<double>(order.size()));
}

DecodedSample PointField::decode_feature(ad::Tape& tape, const FieldParameters& params, ad::Var feature,
                                         const Vec3& view_dir) const {
  DecodedSample out;
  out.sigma = tape.softplus(linear(tape, params, density_, feature));
  const double d[3] = {view_dir.x(), view_dir.y(), view_dir.z()};
  const auto enc = positional_encoding(d, config_.dir_freqs);
  const ad::Var input = enc.empty() ? feature : tape.concat({feature, tape.constant(enc)});
  out.color = tape.sigmoid(mlp(tape, params, color_, input));
  return out;
}

std::optional<DecodedSample> PointField::decode(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                                                const Vec3& view_dir, std::span<const NeighborSet> valid) const {
  const auto feature = mean_feature(tape, params, q, valid);
  if (!feature) return std::nullopt;
  return decode_feature(tape, params, *feature, view_dir);
}

// ---------------------------------------------------------------------------

CanonicalFrame make_frame(const HierarchyConfig& config, const PointCloud& cloud) {
  if (config.canonical == "fixed") return fixed_frame(config.frame_translation, config.frame_scale);
  return compute_canonical_frame(cloud, config.frame_margin);
}

Schedule resolve_schedule(const HierarchyConfig& config, const PointCloud& cloud) {
  Schedule schedule{config.omega, config.gamma};
  if (config.omega <= 0.0 || config.gamma <= 0.0) {
    if (config.num_local_levels == 0 || cloud.empty()) {
      schedule = {config.omega > 0.0 ? config.omega : 1.0, config.gamma > 1.0 ? config.gamma : 2.0};
    } else {
      const Schedule automatic = auto_schedule(cloud, config.num_local_levels);
      if (config.omega <= 0.0) schedule.omega = automatic.omega;
      if (config.gamma <= 0.0) schedule.gamma = automatic.gamma;
    }
  }
  return schedule;
}

PointHierarchy make_hierarchy(const HierarchyConfig& config, const PointCloud& cloud) {
  const Schedule schedule = resolve_schedule(config, cloud);
  return build_hierarchy(cloud, schedule.omega, schedule.gamma, config.num_local_levels);
}

}  // namespace mspnf
