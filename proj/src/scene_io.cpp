// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/scene_io.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mspnf {

// ---------------------------------------------------------------------------
// Canonical frame

CanonicalFrame compute_canonical_frame(const PointCloud& cloud, double margin) {
  if (cloud.count() < 4) throw Error("canonical frame needs at least 4 points");
  for (const auto& p : cloud.positions) {
    if (!p.allFinite()) throw Error("canonical frame: non-finite point");
  }

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : cloud.positions) centroid += p;
  centroid /= static_cast<double>(cloud.count());

  Mat3 cov = Mat3::Zero();
  for (const auto& p : cloud.positions) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(cloud.count());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("canonical frame: eigen decomposition failed");
  // Eigen sorts ascending; we want descending variance.
  const Vec3 evals = eig.eigenvalues().reverse();
  Mat3 axes = eig.eigenvectors().rowwise().reverse();

  const double top = evals(0);
  if (!(top > 0.0)) throw Error("canonical frame: degenerate cloud (all points coincide)");
  int rank = 0;
  for (int i = 0; i < 3; ++i) {
    if (evals(i) > 1e-12 * top) ++rank;
  }

  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < 3; ++r) {
      if (std::abs(axes(r, c)) > 1e-12) {
        if (axes(r, c) < 0.0) axes.col(c) = -axes.col(c);
        break;
      }
    }
  }
  axes.col(2) = axes.col(0).cross(axes.col(1)).normalized();

  CanonicalFrame frame;
  frame.rotation = axes;
  frame.translation = -centroid;
  frame.rank = rank;
  Vec3 extent = Vec3::Zero();
  for (const auto& p : cloud.positions) {
    extent = extent.cwiseMax((axes.transpose() * (p - centroid)).cwiseAbs());
  }
  for (int i = 0; i < 3; ++i) {
    frame.scale(i) = (i < rank && extent(i) > 0.0) ? extent(i) * (1.0 + margin) : 1.0;
  }
  return frame;
}

CanonicalFrame fixed_frame(const Vec3& translation, const Vec3& scale) {
  if (!((scale.array() > 0.0).all())) throw Error("fixed frame: scale must be positive");
  CanonicalFrame frame;
  frame.translation = translation;
  frame.scale = scale;
  return frame;
}

// ---------------------------------------------------------------------------
// Camera and rays

void Camera::validate() const {
  if (!(intrinsics.fx > 0.0 && intrinsics.fy > 0.0)) throw Error("camera: focal lengths must be positive");
  if (!(near > 0.0 && near < far)) throw Error("camera: need 0 < near < far");
  if (width <= 0 || height <= 0) throw Error("camera: resolution must be positive");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double fov_y_radians,
               double near, double far) {
  const Vec3 back = (eye - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  Camera cam;
  // Rows of the world->camera rotation are the camera axes in world space.
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = true_up;
  cam.rotation.row(2) = back;
  cam.translation = -(cam.rotation * eye);
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_radians);
  cam.intrinsics = {f, f, 0.5 * width, 0.5 * height};
  cam.near = near;
  cam.far = far;
  cam.validate();
  return cam;
}

std::string format_camera(const Camera& c) {
  std::ostringstream ss;
  ss.precision(17);
  ss << c.intrinsics.fx << ' ' << c.intrinsics.fy << ' ' << c.intrinsics.cx << ' ' << c.intrinsics.cy << ' '
     << c.width << ' ' << c.height << ' ' << c.near << ' ' << c.far;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) ss << ' ' << c.rotation(r, k);
  }
  for (int k = 0; k < 3; ++k) ss << ' ' << c.translation(k);
  return ss.str();
}

Camera parse_camera(const std::string& line) {
  std::istringstream ss(line);
  Camera c;
  ss >> c.intrinsics.fx >> c.intrinsics.fy >> c.intrinsics.cx >> c.intrinsics.cy >> c.width >> c.height >> c.near >>
      c.far;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) ss >> c.rotation(r, k);
  }
  for (int k = 0; k < 3; ++k) ss >> c.translation(k);
  if (!ss) throw ParseError("malformed camera line: expected 20 numbers");
  c.validate();
  return c;
}

Camera load_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open camera file '" + path.string() + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos && line[0] != '#') return parse_camera(line);
  }
  throw ParseError("camera file '" + path.string() + "' is empty");
}

void save_camera(const std::filesystem::path& path, const Camera& camera) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write camera file '" + path.string() + "'");
  out << format_camera(camera) << '\n';
}

void RayBatch::validate() const {
  const std::size_t n = origins.size();
  if (directions.size() != n || near.size() != n || far.size() != n) throw Error("ray batch: inconsistent sizes");
  if (!gt_colors.empty() && gt_colors.size() != n) throw Error("ray batch: gt color count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(directions[i].norm() - 1.0) > 1e-12) throw Error("ray batch: direction not unit length");
    if (!(near[i] < far[i])) throw Error("ray batch: near must be < far");
  }
}

RayBatch generate_rays(const Camera& camera, std::span<const std::size_t> pixel_indices) {
  camera.validate();
  const std::size_t total = static_cast<std::size_t>(camera.width) * camera.height;
  const Vec3 origin = camera.center();
  const Mat3 cam_to_world = camera.rotation.transpose();
  RayBatch batch;
  batch.origins.reserve(pixel_indices.size());
  batch.directions.reserve(pixel_indices.size());
  for (std::size_t index : pixel_indices) {
    if (index >= total) {
      throw Error("pixel index " + std::to_string(index) + " outside " + std::to_string(camera.width) + "x" +
                  std::to_string(camera.height));
    }
    const double col = static_cast<double>(index % camera.width) + 0.5;
    const double row = static_cast<double>(index / camera.width) + 0.5;
    const Vec3 d_cam((col - camera.intrinsics.cx) / camera.intrinsics.fx,
                     -(row - camera.intrinsics.cy) / camera.intrinsics.fy, -1.0);
    batch.origins.push_back(origin);
    batch.directions.push_back((cam_to_world * d_cam).normalized());
    batch.near.push_back(camera.near);
    batch.far.push_back(camera.far);
  }
  return batch;
}

RayBatch generate_all_rays(const Camera& camera) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(camera.width) * camera.height);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return generate_rays(camera, idx);
}

// ---------------------------------------------------------------------------
// Images

void Image::set_pixel(std::size_t index, const Vec3& c) {
  for (int k = 0; k < 3; ++k) data[index * 3 + k] = static_cast<float>(c(k));
}

unsigned char quantize_8bit(float v) {
  const double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  return static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0));
}

namespace {

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Reads the next whitespace-delimited PPM header token, skipping comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw ParseError("PPM: truncated header");
  return tok;
}

int ppm_int(std::istream& in) {
  const std::string tok = ppm_token(in);
  int v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) throw ParseError("PPM: bad header field '" + tok + "'");
  return v;
}

}  // namespace

void save_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize_8bit);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  if (ppm_token(in) != "P6") throw ParseError("PPM: '" + path.string() + "' is not a binary P6 file");
  const int w = ppm_int(in);
  const int h = ppm_int(in);
  const int maxval = ppm_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError("PPM: unsupported dimensions or maxval");
  Image image(w, h);
  std::vector<unsigned char> bytes(image.data.size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw ParseError("PPM: truncated pixel data");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) image.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  return image;
}

void save_f32img(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_u32_le(out, static_cast<std::uint32_t>(image.width));
  write_u32_le(out, static_cast<std::uint32_t>(image.height));
  for (float v : image.data) write_u32_le(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Image load_f32img(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  const auto w = read_u32_le(in);
  const auto h = read_u32_le(in);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) throw ParseError("f32img: bad dimensions");
  Image image(static_cast<int>(w), static_cast<int>(h));
  for (float& v : image.data) v = std::bit_cast<float>(read_u32_le(in));
  return image;
}

void save_image(const std::filesystem::path& path, const Image& image) {
  if (path.extension() == ".ppm") {
    save_ppm(path, image);
  } else if (path.extension() == ".f32img") {
    save_f32img(path, image);
  } else {
    throw Error("unsupported image extension '" + path.extension().string() + "' (use .ppm or .f32img)");
  }
}

Image load_image(const std::filesystem::path& path) {
  if (path.extension() == ".ppm") return load_ppm(path);
  if (path.extension() == ".f32img") return load_f32img(path);
  throw Error("unsupported image extension '" + path.extension().string() + "' (use .ppm or .f32img)");
}

// ---------------------------------------------------------------------------
// ASCII PLY

namespace {

struct PlyProperty {
  std::string name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

PointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open point cloud '" + path.string() + "'");
  const std::string src = path.string();
  auto fail = [&](int line, const std::string& what) -> ParseError {
    return ParseError(src + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") throw fail(line_no, "missing 'ply' magic");
  std::vector<PlyElement> elements;
  bool ascii = false;
  bool header_done = false;
  while (next_line()) {
    const auto tok = tokenize(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw fail(line_no, "only ASCII PLY is supported");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw fail(line_no, "malformed element line");
      std::size_t count = 0;
      const auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), count);
      if (ec != std::errc() || p != tok[2].data() + tok[2].size()) throw fail(line_no, "bad element count");
      elements.push_back({tok[1], count, {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw fail(line_no, "property before any element");
      if (tok.size() == 3) {
        elements.back().properties.push_back({tok[2], false});
      } else if (tok.size() == 5 && tok[1] == "list") {
        elements.back().properties.push_back({tok[4], true});
      } else {
        throw fail(line_no, "malformed property line");
      }
    } else if (tok[0] == "end_header") {
      header_done = true;
      break;
    } else {
      throw fail(line_no, "unexpected header keyword '" + tok[0] + "'");
    }
  }
  if (!header_done) throw fail(line_no, "missing end_header");
  if (!ascii) throw fail(line_no, "missing format line");

  const auto vertex = std::find_if(elements.begin(), elements.end(), [](const auto& e) { return e.name == "vertex"; });
  if (vertex == elements.end()) throw fail(line_no, "no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
    const auto& prop = vertex->properties[i];
    if (prop.is_list) continue;
    if (prop.name == "x") ix = static_cast<int>(i);
    if (prop.name == "y") iy = static_cast<int>(i);
    if (prop.name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw fail(line_no, "vertex element lacks x, y, z properties");

  PointCloud cloud;
  for (const auto& element : elements) {
    const bool is_vertex = &element == &*vertex;
    if (is_vertex) cloud.positions.reserve(element.count);
    for (std::size_t n = 0; n < element.count; ++n) {
      if (!next_line()) throw fail(line_no + 1, "unexpected end of file in element '" + element.name + "'");
      if (!is_vertex) continue;
      const auto tok = tokenize(line);
      // Property values are positional; list properties expand to 1 + count tokens.
      std::vector<double> scalar(element.properties.size(), 0.0);
      std::size_t t = 0;
      for (std::size_t i = 0; i < element.properties.size(); ++i) {
        if (t >= tok.size()) throw fail(line_no, "too few values on vertex line");
        if (element.properties[i].is_list) {
          std::size_t cnt = 0;
          std::from_chars(tok[t].data(), tok[t].data() + tok[t].size(), cnt);
          t += 1 + cnt;
          continue;
        }
        double v = 0.0;
        const auto [p, ec] = std::from_chars(tok[t].data(), tok[t].data() + tok[t].size(), v);
        if (ec != std::errc() || p != tok[t].data() + tok[t].size()) {
          throw fail(line_no, "invalid number '" + tok[t] + "'");
        }
        scalar[i] = v;
        ++t;
      }
      const Vec3 pos(scalar[ix], scalar[iy], scalar[iz]);
      if (!pos.allFinite()) throw fail(line_no, "non-finite coordinate");
      cloud.positions.push_back(pos);
    }
  }
  return cloud;
}

void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write point cloud '" + path.string() + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.count()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[96];
  for (const auto& p : cloud.positions) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

std::string view_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03zu", i);
  return buf;
}

void save_views(const std::filesystem::path& dir, const std::vector<View>& views) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto stem = view_stem(i);
    save_camera(dir / (stem + ".cam"), views[i].camera);
    save_f32img(dir / (stem + ".f32img"), views[i].image);
    save_ppm(dir / (stem + ".ppm"), views[i].image);
  }
}

std::vector<View> load_views(const std::filesystem::path& dir) {
  std::vector<View> views;
  if (!std::filesystem::exists(dir)) return views;
  for (std::size_t i = 0;; ++i) {
    const auto stem = view_stem(i);
    const auto cam = dir / (stem + ".cam");
    if (!std::filesystem::exists(cam)) break;
    View v{load_camera(cam), load_f32img(dir / (stem + ".f32img"))};
    if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
      throw ParseError("view '" + cam.string() + "': image size does not match camera");
    }
    views.push_back(std::move(v));
  }
  return views;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  save_point_cloud(dir / "points.ply", dataset.cloud);
  save_views(dir / "train", dataset.train);
  save_views(dir / "test", dataset.test);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("scene directory '" + dir.string() + "' does not exist");
  Dataset d;
  d.cloud = load_point_cloud(dir / "points.ply");
  d.train = load_views(dir / "train");
  d.test = load_views(dir / "test");
  if (d.train.empty()) throw Error("scene '" + dir.string() + "' has no training views");
  return d;
}

}  // namespace mspnf
