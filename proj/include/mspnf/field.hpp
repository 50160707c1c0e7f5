// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// The trainable multi-scale radiance field.
//
// Each local level s stores one feature per representative point. The finer
// levels keep a D-vector per point decoded by a per-level MLP; the coarsest
// `triplane_levels` keep a small tri-plane pyramid per point. The global voxel
// is a single tri-plane over the canonical frame, augmented with a positional
// encoding. Features of all valid levels are averaged and decoded into a
// density and a view-dependent color.
#pragma once

#include "mspnf/autodiff.hpp"
#include "mspnf/config.hpp"
#include "mspnf/hierarchy.hpp"
#include "mspnf/spatial_index.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mspnf {

enum class ParamGroup : std::uint8_t { Decoder = 0, Features = 1 };

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  ParamGroup group = ParamGroup::Decoder;
  std::vector<double> values;
};

/// All trainable state, as an ordered list of named tensors.
class FieldParameters {
 public:
  std::vector<Tensor> tensors;

  std::uint32_t add(std::string name, std::vector<std::size_t> shape, ParamGroup group);
  /// Index of `name`; throws if absent.
  std::uint32_t find(const std::string& name) const;
  ad::TensorRef ref(std::uint32_t id) const { return {id, tensors[id].values}; }
  std::size_t total_size() const;
  /// Same names, shapes, and groups.
  bool same_layout(const FieldParameters& other) const;
  /// Zero-filled tensors with this layout.
  FieldParameters zeros_like() const;
};

/// sin/cos lifting: for each frequency k, sin(2^k pi x_i) for all i, then cos.
std::vector<double> positional_encoding(std::span<const double> x, int num_frequencies);

/// Normalized inverse-distance weights w_k = (d_k + eps)^-1 / sum_j (d_j + eps)^-1.
std::vector<double> inverse_distance_weights(std::span<const double> distances, double epsilon);

/// Bilinear read of a res x res grid of `dim`-vectors stored row-major at `base`
/// (row index along b). a, b in [-1, 1] are clamped; grid corners sit at +-1.
void bilinear_terms(double a, double b, int res, std::size_t base, std::size_t dim, double weight,
                    std::vector<ad::GatherTerm>& out);

/// Tri-plane stack layout: for plane XY, YZ, XZ in turn, each pyramid level's
/// res x res grid. Returns the number of doubles in one stack.
std::size_t triplane_stack_size(std::span<const int> pyramid, std::size_t dim);

/// Gather terms for f_XY[u] + f_YZ[u] + f_XZ[u], each plane summed over the pyramid.
void triplane_terms(const Vec3& u, std::span<const int> pyramid, std::size_t base, std::size_t dim,
                    std::vector<ad::GatherTerm>& out);

enum class LevelKind : std::uint8_t { PointMlp, PointTriplane };

struct DecodedSample {
  ad::Var color;  // 3
  ad::Var sigma;  // 1
};

class PointField {
 public:
  PointField(FieldConfig config, PointHierarchy hierarchy, CanonicalFrame frame);

  const FieldConfig& config() const { return config_; }
  const PointHierarchy& hierarchy() const { return hierarchy_; }
  const CanonicalFrame& frame() const { return frame_; }
  std::span<const VoxelHashIndex> indices() const { return indices_; }
  int num_local_levels() const { return static_cast<int>(hierarchy_.levels.size()); }
  LevelKind level_kind(int level_index) const { return kinds_.at(level_index - 1); }
  std::size_t decoder_input_dim() const;

  /// Zero tensors named and shaped for this hierarchy and config.
  FieldParameters make_layout() const;
  /// Point features ~ U(+-feature_init), tri-planes ~ U(+-triplane_init),
  /// weights Kaiming-uniform on fan-in, biases 0. Deterministic in `seed`.
  FieldParameters init_parameters(std::uint64_t seed) const;
  /// Throws Error when `params` was not made for this field.
  void check_parameters(const FieldParameters& params) const;

  std::vector<NeighborSet> valid_scales(const Vec3& q) const;

  /// Per-level MLP applied to f_p concatenated with delta / (tau * edge), delta = p - q.
  ad::Var feature_fn_mlp(ad::Tape& tape, const FieldParameters& params, int level_index, std::uint32_t point,
                         const Vec3& delta) const;
  /// Sum of the three planes of the point's tri-plane stack at u (clamped to [-1, 1]^3).
  ad::Var feature_fn_triplane(ad::Tape& tape, const FieldParameters& params, int level_index, std::uint32_t point,
                              const Vec3& u) const;
  /// Global tri-plane at the canonical position of q, concatenated with its
  /// positional encoding and projected back to feature_dim.
  ad::Var global_feature(ad::Tape& tape, const FieldParameters& params, const Vec3& q) const;
  /// Inverse-distance weighted mean of F over a non-empty neighbor set.
  ad::Var aggregate_level(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                          const NeighborSet& neighbors) const;
  /// Mean of the level features over `valid`, decoded into (color, sigma).
  /// Returns nothing when `valid` is empty (possible only without the global level).
  std::optional<DecodedSample> decode(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                                      const Vec3& view_dir, std::span<const NeighborSet> valid) const;
  /// Level-averaged feature fed to the decoder (exposed for tests).
  std::optional<ad::Var> mean_feature(ad::Tape& tape, const FieldParameters& params, const Vec3& q,
                                      std::span<const NeighborSet> valid) const;
  DecodedSample decode_feature(ad::Tape& tape, const FieldParameters& params, ad::Var feature,
                               const Vec3& view_dir) const;

 private:
  struct LinearIds {
    std::uint32_t weight = 0;
    std::uint32_t bias = 0;
    std::size_t in = 0;
    std::size_t out = 0;
  };
  struct LevelIds {
    std::uint32_t features = 0;  // per-point vectors or per-point tri-plane stacks
    std::vector<LinearIds> mlp;
  };

  ad::Var linear(ad::Tape& tape, const FieldParameters& params, const LinearIds& layer, ad::Var x) const;
  ad::Var mlp(ad::Tape& tape, const FieldParameters& params, std::span<const LinearIds> layers, ad::Var x) const;

  FieldConfig config_;
  PointHierarchy hierarchy_;
  CanonicalFrame frame_;
  std::vector<VoxelHashIndex> indices_;
  std::vector<LevelKind> kinds_;
  std::size_t point_stack_size_ = 0;
  std::size_t global_stack_size_ = 0;

  // Tensor ids in layout order.
  std::vector<LevelIds> levels_;
  std::uint32_t global_triplane_ = 0;
  LinearIds global_proj_;
  LinearIds density_;
  std::vector<LinearIds> color_;
  FieldParameters layout_;
};

/// Canonical frame selected by the hierarchy config ("pca" or "fixed").
CanonicalFrame make_frame(const HierarchyConfig& config, const PointCloud& cloud);

/// Explicit (omega, gamma) where given, the automatic schedule otherwise.
/// An empty cloud or zero local levels falls back to (1, 2).
Schedule resolve_schedule(const HierarchyConfig& config, const PointCloud& cloud);

/// Builds the hierarchy with explicit (omega, gamma) or the automatic schedule.
PointHierarchy make_hierarchy(const HierarchyConfig& config, const PointCloud& cloud);

}  // namespace mspnf
