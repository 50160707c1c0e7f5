// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes with closed-form ground truth, hole injection, and the
// ablation runner.
#pragma once

#include "mspnf/config.hpp"
#include "mspnf/scene_io.hpp"
#include "mspnf/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mspnf {

struct Primitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  /// Sphere: x is the radius. Box: half extents.
  Vec3 size = Vec3::Constant(0.5);
  Vec3 albedo = Vec3::Constant(0.5);

  /// Signed distance (exact for spheres, the usual bound for boxes).
  double sdf(const Vec3& p) const;
  void validate() const;
};

/// "sphere cx cy cz r ar ag ab" or "box cx cy cz hx hy hz ar ag ab".
Primitive parse_primitive(std::string_view text);
std::string format_primitive(const Primitive& p);

struct Hole {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct SceneSpec {
  /// ';'-separated primitive descriptions.
  std::string primitives =
      "sphere -0.3 0 0.05 0.35 0.85 0.25 0.2; box 0.35 -0.05 -0.1 0.22 0.25 0.2 0.2 0.7 0.3; "
      "sphere 0.05 0.32 0.35 0.18 0.2 0.35 0.9";
  /// Peak density inside a primitive.
  double density = 40.0;
  /// Width of the density transition across the surface.
  double softness = 0.015;
  int num_train_views = 8;
  int num_test_views = 4;
  int width = 32;
  int height = 32;
  double fov_degrees = 40.0;
  double camera_radius = 2.2;
  double camera_elevation_degrees = 30.0;
  double near = 1.0;
  double far = 3.4;
  Vec3 background = Vec3::Ones();
  int num_points = 4000;
  /// Training quadrature the ground truth must out-resolve.
  int train_samples = 64;
  int gt_sample_factor = 8;
  /// Removal balls applied to the emitted cloud: ';'-separated "cx cy cz r".
  std::string holes;
  /// When > 0, random balls centered on surface points are added until at
  /// least this fraction of the cloud is removed.
  double hole_fraction = 0.0;
  double hole_radius = 0.15;
  std::uint64_t seed = 0;

  std::vector<Primitive> parsed_primitives() const;
  std::vector<Hole> parsed_holes() const;
  void validate() const;
};

Schema make_scene_schema(SceneSpec& spec);
SceneSpec resolve_scene_spec(const std::string& text, const std::vector<KeyValue>& overrides);

/// Union of soft primitives: sigma = sum_k density * sigmoid(-sdf_k / softness),
/// color = the density-weighted mean albedo.
class AnalyticField {
 public:
  AnalyticField(std::vector<Primitive> primitives, double density, double softness);

  double density(const Vec3& p) const;
  Vec3 color(const Vec3& p) const;
  /// Both at once.
  void evaluate(const Vec3& p, double& sigma, Vec3& rgb) const;
  const std::vector<Primitive>& primitives() const { return primitives_; }

 private:
  std::vector<Primitive> primitives_;
  double density_;
  double softness_;
};

/// Composite of the analytic field at `num_samples` midpoints per pixel ray.
Image render_analytic(const AnalyticField& field, const Camera& camera, int num_samples, const Vec3& background);

/// Ring of cameras looking at the origin; `azimuth_offset` in units of the ring step.
std::vector<Camera> ring_cameras(const SceneSpec& spec, int count, double azimuth_offset);

struct HoleResult {
  PointCloud cloud;
  std::size_t removed = 0;
  double removed_fraction = 0.0;
};

/// Removes every point with ||p - c|| <= r for some hole.
HoleResult punch_holes(const PointCloud& cloud, const std::vector<Hole>& holes);

/// Balls of `radius` centered on random cloud points until at least
/// `fraction` of the points fall inside one.
std::vector<Hole> random_holes(const PointCloud& cloud, double fraction, double radius, std::uint64_t seed);

struct SyntheticScene {
  SceneSpec spec;
  AnalyticField field;
  Dataset dataset;
  std::vector<Hole> holes;
  /// Fraction of surface samples removed by the holes.
  double removed_fraction = 0.0;
};

/// Deterministic in spec.seed.
SyntheticScene generate_scene(const SceneSpec& spec);

/// save_dataset plus scene.cfg with the resolved spec.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

struct AblationVariant {
  std::string name;
  std::vector<KeyValue> overrides;
};

/// Lines of `name key=value ...`; '#' starts a comment. Also accepts the
/// built-in grid names "scales", "global", "ratio", and "representation".
std::vector<AblationVariant> parse_grid(const std::string& text);
std::vector<AblationVariant> builtin_grid(const std::string& name);

struct AblationRow {
  std::string variant;
  double psnr = 0.0;
  double ssim = 0.0;
  int iterations = 0;
  double wall_seconds = 0.0;
  /// Empty on success; the training error otherwise.
  std::string error;
};

/// Trains every variant on `base` plus its overrides and evaluates on the
/// held-out views. Failures are recorded in the row and the run continues.
std::vector<AblationRow> run_ablation(const Dataset& dataset, const RunConfig& base,
                                      const std::vector<AblationVariant>& grid, int workers);

/// Header: variant,psnr,ssim,iterations,wall_seconds (plus error when any row failed).
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace mspnf
