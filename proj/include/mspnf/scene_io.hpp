// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Point clouds, images, the pinhole camera, and PCA canonicalization.
#pragma once

#include "mspnf/common.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mspnf {

struct PointCloud {
  std::vector<Vec3> positions;

  std::size_t count() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
};

/// Maps world points into the normalized frame of the global tri-plane:
/// `x = R^T (p + translation) / scale` (component-wise division).
struct CanonicalFrame {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  /// Number of principal axes with non-zero variance; missing axes use unit scale.
  int rank = 3;

  Vec3 to_canonical(const Vec3& p) const {
    return (rotation.transpose() * (p + translation)).cwiseQuotient(scale);
  }
  Vec3 to_world(const Vec3& x) const { return rotation * x.cwiseProduct(scale) - translation; }
};

/// PCA frame: columns of `rotation` are principal axes by descending variance,
/// the first two with a positive first non-zero component and the third their
/// cross product. `margin` inflates the fitted half extents (0.01 = 1%).
CanonicalFrame compute_canonical_frame(const PointCloud& cloud, double margin = 0.01);

CanonicalFrame fixed_frame(const Vec3& translation, const Vec3& scale);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Ideal pinhole. Pose maps world to camera: x_cam = rotation * x_world + translation.
/// The camera looks down -z with +y up; pixel rows grow downwards.
struct Camera {
  Intrinsics intrinsics;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 1;
  int height = 1;
  double near = 0.1;
  double far = 10.0;

  Vec3 center() const { return -(rotation.transpose() * translation); }
  void validate() const;
};

/// Camera looking from `eye` at `target`; `up` need not be orthogonal.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double fov_y_radians,
               double near, double far);

/// One line: fx fy cx cy width height near far r00 r01 .. r22 t0 t1 t2
std::string format_camera(const Camera& camera);
Camera parse_camera(const std::string& line);
Camera load_camera(const std::filesystem::path& path);
void save_camera(const std::filesystem::path& path, const Camera& camera);

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<double> near;
  std::vector<double> far;
  /// Empty, or one ground-truth color per ray.
  std::vector<Vec3> gt_colors;

  std::size_t size() const { return origins.size(); }
  void validate() const;
};

/// Rays through pixel centers; `pixel_indices` are row-major (row * width + col).
RayBatch generate_rays(const Camera& camera, std::span<const std::size_t> pixel_indices);
RayBatch generate_all_rays(const Camera& camera);

/// RGB float image, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  Vec3 pixel(std::size_t index) const {
    return {data[index * 3], data[index * 3 + 1], data[index * 3 + 2]};
  }
  void set_pixel(std::size_t index, const Vec3& c);
};

/// 8-bit quantization used by PPM export: round-half-up of v * 255, clamped.
unsigned char quantize_8bit(float v);

void save_ppm(const std::filesystem::path& path, const Image& image);
Image load_ppm(const std::filesystem::path& path);
/// Little-endian: u32 width, u32 height, then row-major RGB f32.
void save_f32img(const std::filesystem::path& path, const Image& image);
Image load_f32img(const std::filesystem::path& path);
/// Dispatches on extension (.ppm or .f32img).
void save_image(const std::filesystem::path& path, const Image& image);
Image load_image(const std::filesystem::path& path);

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

struct View {
  Camera camera;
  Image image;
};

/// Posed images plus the input point cloud.
struct Dataset {
  PointCloud cloud;
  std::vector<View> train;
  std::vector<View> test;
};

/// Directory layout: points.ply, {train,test}/NNN.cam, NNN.f32img, NNN.ppm.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mspnf
