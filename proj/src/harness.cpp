// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/harness.hpp"

#include "mspnf/parallel.hpp"
#include "mspnf/renderer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace mspnf {

namespace {

constexpr std::uint64_t kPointStream = 0x706f696e7473ULL;
constexpr std::uint64_t kHoleStream = 0x686f6c6573ULL;

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::vector<double> parse_numbers(std::istringstream& in, const std::string& what) {
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ParseError(what + ": '" + tok + "' is not a number");
    v.push_back(x);
  }
  return v;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives

double Primitive::sdf(const Vec3& p) const {
  if (kind == Kind::Sphere) return (p - center).norm() - size.x();
  const Vec3 q = (p - center).cwiseAbs() - size;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

void Primitive::validate() const {
  if (!center.allFinite() || !size.allFinite() || !albedo.allFinite()) throw Error("primitive: non-finite parameter");
  if (kind == Kind::Sphere && !(size.x() > 0.0)) throw Error("primitive: sphere radius must be > 0");
  if (kind == Kind::Box && !(size.array() > 0.0).all()) throw Error("primitive: box half extents must be > 0");
  if ((albedo.array() < 0.0).any() || (albedo.array() > 1.0).any()) throw Error("primitive: albedo must be in [0, 1]");
}

Primitive parse_primitive(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string kind;
  in >> kind;
  const auto v = parse_numbers(in, "primitive '" + std::string(text) + "'");
  Primitive p;
  if (kind == "sphere") {
    if (v.size() != 7) throw ParseError("sphere needs 7 numbers: cx cy cz r ar ag ab");
    p.kind = Primitive::Kind::Sphere;
    p.center = Vec3(v[0], v[1], v[2]);
    p.size = Vec3(v[3], v[3], v[3]);
    p.albedo = Vec3(v[4], v[5], v[6]);
  } else if (kind == "box") {
    if (v.size() != 9) throw ParseError("box needs 9 numbers: cx cy cz hx hy hz ar ag ab");
    p.kind = Primitive::Kind::Box;
    p.center = Vec3(v[0], v[1], v[2]);
    p.size = Vec3(v[3], v[4], v[5]);
    p.albedo = Vec3(v[6], v[7], v[8]);
  } else {
    throw ParseError("unknown primitive '" + kind + "' (expected sphere or box)");
  }
  p.validate();
  return p;
}

std::string format_primitive(const Primitive& p) {
  std::ostringstream s;
  s.precision(17);
  const auto& c = p.center;
  const auto& a = p.albedo;
  if (p.kind == Primitive::Kind::Sphere) {
    s << "sphere " << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << p.size.x();
  } else {
    s << "box " << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << p.size.x() << ' ' << p.size.y() << ' '
      << p.size.z();
  }
  s << ' ' << a.x() << ' ' << a.y() << ' ' << a.z();
  return s.str();
}

// ---------------------------------------------------------------------------
// Scene spec

std::vector<Primitive> SceneSpec::parsed_primitives() const {
  std::vector<Primitive> out;
  for (const auto& part : split(primitives, ';')) {
    if (!blank(part)) out.push_back(parse_primitive(part));
  }
  return out;
}

std::vector<Hole> SceneSpec::parsed_holes() const {
  std::vector<Hole> out;
  for (const auto& part : split(holes, ';')) {
    if (blank(part)) continue;
    std::istringstream in(part);
    const auto v = parse_numbers(in, "hole '" + part + "'");
    if (v.size() != 4) throw ParseError("hole needs 4 numbers: cx cy cz r");
    if (!(v[3] >= 0.0)) throw ParseError("hole radius must be >= 0");
    out.push_back({Vec3(v[0], v[1], v[2]), v[3]});
  }
  return out;
}

void SceneSpec::validate() const {
  if (parsed_primitives().empty()) throw Error("scene spec: at least one primitive is required");
  parsed_holes();
  if (!(density > 0.0) || !(softness > 0.0)) throw Error("scene spec: density and softness must be > 0");
  if (num_train_views < 2) throw Error("scene spec: need at least 2 training cameras");
  if (num_test_views < 0) throw Error("scene spec: num_test_views must be >= 0");
  if (width < 1 || height < 1) throw Error("scene spec: resolution must be positive");
  if (!(fov_degrees > 0.0 && fov_degrees < 180.0)) throw Error("scene spec: fov must be in (0, 180)");
  if (!(near > 0.0 && near < far)) throw Error("scene spec: need 0 < near < far");
  if (num_points < 0) throw Error("scene spec: num_points must be >= 0");
  if (train_samples < 2) throw Error("scene spec: train_samples must be >= 2");
  if (gt_sample_factor < 4) throw Error("scene spec: gt_sample_factor must be >= 4");
  if (!(hole_fraction >= 0.0 && hole_fraction < 1.0)) throw Error("scene spec: hole_fraction must be in [0, 1)");
  if (hole_fraction > 0.0 && !(hole_radius > 0.0)) throw Error("scene spec: hole_radius must be > 0");
}

Schema make_scene_schema(SceneSpec& s) {
  Schema schema;
  schema.add("primitives", &s.primitives, "';'-separated: sphere cx cy cz r ar ag ab | box cx cy cz hx hy hz ar ag ab");
  schema.add("density", &s.density, "peak density inside primitives");
  schema.add("softness", &s.softness, "surface transition width");
  schema.add("num_train_views", &s.num_train_views, "training cameras on the ring");
  schema.add("num_test_views", &s.num_test_views, "held-out cameras, offset half a ring step");
  schema.add("width", &s.width, "image width");
  schema.add("height", &s.height, "image height");
  schema.add("fov_degrees", &s.fov_degrees, "vertical field of view");
  schema.add("camera_radius", &s.camera_radius, "ring radius");
  schema.add("camera_elevation_degrees", &s.camera_elevation_degrees, "ring elevation above the xz plane");
  schema.add("near", &s.near, "near bound of every ray");
  schema.add("far", &s.far, "far bound of every ray");
  schema.add("background", &s.background, "background color r,g,b");
  schema.add("num_points", &s.num_points, "surface samples before hole removal");
  schema.add("train_samples", &s.train_samples, "quadrature samples used in training");
  schema.add("gt_sample_factor", &s.gt_sample_factor, "ground-truth samples per ray / train_samples (>= 4)");
  schema.add("holes", &s.holes, "';'-separated removal balls: cx cy cz r");
  schema.add("hole_fraction", &s.hole_fraction, "remove at least this fraction with random balls");
  schema.add("hole_radius", &s.hole_radius, "radius of the random balls");
  schema.add("seed", &s.seed, "scene seed");
  return schema;
}

SceneSpec resolve_scene_spec(const std::string& text, const std::vector<KeyValue>& overrides) {
  SceneSpec spec;
  Schema schema = make_scene_schema(spec);
  schema.apply(parse_key_values(text, "<scene spec>"));
  schema.apply(overrides);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Analytic field

AnalyticField::AnalyticField(std::vector<Primitive> primitives, double density, double softness)
    : primitives_(std::move(primitives)), density_(density), softness_(softness) {
  if (primitives_.empty()) throw Error("analytic field: no primitives");
  for (const auto& p : primitives_) p.validate();
}

void AnalyticField::evaluate(const Vec3& p, double& sigma, Vec3& rgb) const {
  sigma = 0.0;
  Vec3 weighted = Vec3::Zero();
  for (const auto& prim : primitives_) {
    const double s = density_ * sigmoid(-prim.sdf(p) / softness_);
    sigma += s;
    weighted += s * prim.albedo;
  }
  rgb = sigma > 0.0 ? Vec3(weighted / sigma) : Vec3(primitives_.front().albedo);
}

double AnalyticField::density(const Vec3& p) const {
  double s;
  Vec3 c;
  evaluate(p, s, c);
  return s;
}

Vec3 AnalyticField::color(const Vec3& p) const {
  double s;
  Vec3 c;
  evaluate(p, s, c);
  return c;
}

Image render_analytic(const AnalyticField& field, const Camera& camera, int num_samples, const Vec3& background) {
  const RayBatch rays = generate_all_rays(camera);
  Image image(camera.width, camera.height);
  std::mt19937_64 unused(0);
  std::vector<Vec3> colors(num_samples);
  std::vector<double> sigmas(num_samples);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto s = sample_ray(rays.near[r], rays.far[r], num_samples, false, unused);
    for (int i = 0; i < num_samples; ++i) {
      field.evaluate(rays.origins[r] + s.depths[i] * rays.directions[r], sigmas[i], colors[i]);
    }
    image.set_pixel(r, composite(colors, sigmas, s.deltas, background).pixel);
  }
  return image;
}

std::vector<Camera> ring_cameras(const SceneSpec& spec, int count, double azimuth_offset) {
  std::vector<Camera> cams;
  const double elev = spec.camera_elevation_degrees * std::numbers::pi / 180.0;
  const double fov = spec.fov_degrees * std::numbers::pi / 180.0;
  for (int k = 0; k < count; ++k) {
    const double az = 2.0 * std::numbers::pi * (k + azimuth_offset) / count;
    const Vec3 eye = spec.camera_radius *
                     Vec3(std::cos(elev) * std::cos(az), std::sin(elev), std::cos(elev) * std::sin(az));
    cams.push_back(
        look_at(eye, Vec3::Zero(), Vec3::UnitY(), spec.width, spec.height, fov, spec.near, spec.far));
  }
  return cams;
}

// ---------------------------------------------------------------------------
// Holes

HoleResult punch_holes(const PointCloud& cloud, const std::vector<Hole>& holes) {
  HoleResult r;
  for (const auto& p : cloud.positions) {
    const bool inside = std::any_of(holes.begin(), holes.end(),
                                    [&](const Hole& h) { return (p - h.center).norm() <= h.radius; });
    if (inside) {
      ++r.removed;
    } else {
      r.cloud.positions.push_back(p);
    }
  }
  r.removed_fraction = cloud.empty() ? 0.0 : static_cast<double>(r.removed) / static_cast<double>(cloud.count());
  return r;
}

std::vector<Hole> random_holes(const PointCloud& cloud, double fraction, double radius, std::uint64_t seed) {
  std::vector<Hole> holes;
  if (cloud.empty() || fraction <= 0.0) return holes;
  std::mt19937_64 rng(mix_seed(seed, kHoleStream));
  std::vector<char> removed(cloud.count(), 0);
  std::size_t count = 0;
  const auto target = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(cloud.count())));
  while (count < target) {
    const Vec3 c = cloud.positions[rng() % cloud.count()];
    holes.push_back({c, radius});
    for (std::size_t i = 0; i < cloud.count(); ++i) {
      if (!removed[i] && (cloud.positions[i] - c).norm() <= radius) {
        removed[i] = 1;
        ++count;
      }
    }
  }
  return holes;
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

double surface_area(const Primitive& p) {
  if (p.kind == Primitive::Kind::Sphere) return 4.0 * std::numbers::pi * p.size.x() * p.size.x();
  const Vec3& h = p.size;
  return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
}

Vec3 sample_surface(const Primitive& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  if (p.kind == Primitive::Kind::Sphere) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec3 n;
    do {
      n = Vec3(normal(rng), normal(rng), normal(rng));
    } while (n.norm() < 1e-12);
    return p.center + p.size.x() * n.normalized();
  }
  const Vec3& h = p.size;
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};  // faces normal to x, y, z
  std::uniform_real_distribution<double> pick(0.0, areas[0] + areas[1] + areas[2]);
  const double a = pick(rng);
  const int axis = a < areas[0] ? 0 : (a < areas[0] + areas[1] ? 1 : 2);
  Vec3 local(unit(rng) * h.x(), unit(rng) * h.y(), unit(rng) * h.z());
  local(axis) = (unit(rng) < 0.0 ? -1.0 : 1.0) * h(axis);
  return p.center + local;
}

}  // namespace

SyntheticScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const auto prims = spec.parsed_primitives();
  SyntheticScene scene{spec, AnalyticField(prims, spec.density, spec.softness), {}, {}, 0.0};

  // Surface samples split by area; points buried inside another primitive are dropped.
  double total_area = 0.0;
  for (const auto& p : prims) total_area += surface_area(p);
  std::mt19937_64 rng(mix_seed(spec.seed, kPointStream));
  PointCloud full;
  for (std::size_t k = 0; k < prims.size(); ++k) {
    const auto n = static_cast<int>(std::llround(spec.num_points * surface_area(prims[k]) / total_area));
    for (int i = 0; i < n; ++i) {
      const Vec3 q = sample_surface(prims[k], rng);
      bool buried = false;
      for (std::size_t j = 0; j < prims.size(); ++j) {
        if (j != k && prims[j].sdf(q) < 0.0) buried = true;
      }
      if (!buried) full.positions.push_back(q);
    }
  }

  scene.holes = spec.parsed_holes();
  if (spec.hole_fraction > 0.0) {
    const PointCloud rest = punch_holes(full, scene.holes).cloud;
    const double already = full.empty() ? 0.0 : 1.0 - static_cast<double>(rest.count()) / full.count();
    if (already < spec.hole_fraction) {
      const double needed = (spec.hole_fraction - already) * full.count() / std::max<std::size_t>(rest.count(), 1);
      for (const auto& h : random_holes(rest, needed, spec.hole_radius, spec.seed)) scene.holes.push_back(h);
    }
  }
  HoleResult punched = punch_holes(full, scene.holes);
  scene.dataset.cloud = std::move(punched.cloud);
  scene.removed_fraction = punched.removed_fraction;

  const int gt_samples = spec.train_samples * spec.gt_sample_factor;
  auto render_views = [&](const std::vector<Camera>& cams, std::vector<View>& out) {
    out.resize(cams.size());
    parallel_for(cams.size(), resolve_workers(0), [&](std::size_t b, std::size_t e, int) {
      for (std::size_t i = b; i < e; ++i) {
        out[i] = {cams[i], render_analytic(scene.field, cams[i], gt_samples, spec.background)};
      }
    });
  };
  render_views(ring_cameras(spec, spec.num_train_views, 0.0), scene.dataset.train);
  render_views(ring_cameras(spec, spec.num_test_views, 0.5), scene.dataset.test);
  return scene;
}

void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  save_dataset(dir, scene.dataset);
  SceneSpec copy = scene.spec;
  std::ofstream out(dir / "scene.cfg");
  if (!out) throw Error("cannot write '" + (dir / "scene.cfg").string() + "'");
  out << make_scene_schema(copy).dump();
  out << "# removed_fraction = " << format_double(scene.removed_fraction) << '\n';
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> builtin_grid(const std::string& name) {
  auto v = [](std::string n, std::vector<KeyValue> o) { return AblationVariant{std::move(n), std::move(o)}; };
  if (name == "scales") {
    std::vector<AblationVariant> g;
    for (int s = 0; s <= 4; ++s) g.push_back(v("scales" + std::to_string(s), {{"num_local_levels", std::to_string(s)}}));
    return g;
  }
  if (name == "global") {
    return {v("full", {}), v("global-only", {{"num_local_levels", "0"}}), v("local-only", {{"use_global", "false"}})};
  }
  if (name == "ratio") {
    return {v("ratio0", {{"point_ratio", "0"}}), v("ratio1", {{"point_ratio", "0.01"}}),
            v("ratio10", {{"point_ratio", "0.1"}}), v("ratio100", {{"point_ratio", "1"}})};
  }
  if (name == "representation") {
    return {v("triplane", {}), v("mlp-only", {{"triplane_levels", "0"}})};
  }
  throw ParseError("unknown grid '" + name + "' (built-in grids: scales, global, ratio, representation)");
}

std::vector<AblationVariant> parse_grid(const std::string& text) {
  const std::string trimmed = [&] {
    const auto b = text.find_first_not_of(" \t\r\n");
    const auto e = text.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string() : text.substr(b, e - b + 1);
  }();
  if (trimmed.find_first_of(" \t\n=#") == std::string::npos && !trimmed.empty()) return builtin_grid(trimmed);

  std::vector<AblationVariant> grid;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream in(line);
    AblationVariant variant;
    if (!(in >> variant.name)) continue;
    if (variant.name.find('=') != std::string::npos) {
      throw ParseError("grid line " + std::to_string(line_no) + ": expected a variant name before overrides");
    }
    std::string tok;
    while (in >> tok) variant.overrides.push_back(parse_override(tok));
    grid.push_back(std::move(variant));
  }
  if (grid.empty()) throw ParseError("grid is empty");
  return grid;
}

std::vector<AblationRow> run_ablation(const Dataset& dataset, const RunConfig& base,
                                      const std::vector<AblationVariant>& grid, int workers) {
  std::vector<AblationRow> rows;
  for (const auto& variant : grid) {
    AblationRow row;
    row.variant = variant.name;
    RunConfig config = base;
    row.iterations = config.train.iterations;
    const auto start = std::chrono::steady_clock::now();
    try {
      Schema schema = make_schema(config);
      schema.apply(variant.overrides);
      config.validate();
      row.iterations = config.train.iterations;
      TrainOptions options;
      options.workers = workers;
      const TrainResult result = train(dataset, config, options);
      row.psnr = result.final_eval.psnr;
      row.ssim = result.final_eval.ssim;
    } catch (const std::exception& e) {
      row.psnr = std::nan("");
      row.ssim = std::nan("");
      row.error = e.what();
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  const bool any_error = std::any_of(rows.begin(), rows.end(), [](const AblationRow& r) { return !r.error.empty(); });
  std::ostringstream out;
  out << "variant,psnr,ssim,iterations,wall_seconds" << (any_error ? ",error" : "") << '\n';
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.4f,%.4f,%d,%.2f", r.psnr, r.ssim, r.iterations, r.wall_seconds);
    out << r.variant << buf;
    if (any_error) {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      out << ",\"" << msg << '"';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mspnf
