// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace mspnf {

double Schedule::edge(int level_index) const { return omega * std::pow(gamma, level_index - 1); }

ScaleLevel grid_subsample(const PointCloud& cloud, double voxel_edge, int level_index) {
  if (!(voxel_edge > 0.0) || !std::isfinite(voxel_edge)) throw Error("grid_subsample: voxel edge must be positive");
  ScaleLevel level;
  level.level_index = level_index;
  level.voxel_edge = voxel_edge;
  const std::size_t n = cloud.count();
  if (n == 0) return level;

  struct Item {
    CellKey cell;
    std::size_t index;
  };
  std::vector<Item> items(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.positions[i];
    if (!p.allFinite()) throw Error("grid_subsample: non-finite coordinate at point " + std::to_string(i));
    items[i] = {cell_of(p, voxel_edge), i};
  }
  auto coord_less = [&](std::size_t a, std::size_t b) {
    const Vec3& pa = cloud.positions[a];
    const Vec3& pb = cloud.positions[b];
    return std::tie(pa.x(), pa.y(), pa.z()) < std::tie(pb.x(), pb.y(), pb.z());
  };
  std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
    if (a.cell != b.cell) return a.cell < b.cell;
    return coord_less(a.index, b.index);
  });

  for (std::size_t begin = 0; begin < n;) {
    std::size_t end = begin + 1;
    while (end < n && items[end].cell == items[begin].cell) ++end;
    Vec3 sum = Vec3::Zero();
    for (std::size_t k = begin; k < end; ++k) sum += cloud.positions[items[k].index];
    level.representatives.push_back(sum / static_cast<double>(end - begin));
    level.source_counts.push_back(end - begin);
    begin = end;
  }
  return level;
}

PointHierarchy build_hierarchy(const PointCloud& cloud, double omega, double gamma, int num_local_levels) {
  if (num_local_levels < 0) throw Error("build_hierarchy: num_local_levels must be >= 0");
  if (!(omega > 0.0)) throw Error("build_hierarchy: omega must be > 0");
  if (!(gamma > 1.0)) throw Error("build_hierarchy: gamma must be > 1");
  PointHierarchy h;
  h.schedule = {omega, gamma};
  for (int s = 1; s <= num_local_levels; ++s) {
    h.levels.push_back(grid_subsample(cloud, h.schedule.edge(s), s));
  }
  if (!cloud.empty()) {
    Vec3 sum = Vec3::Zero();
    for (const auto& p : cloud.positions) sum += p;
    h.global_center = sum / static_cast<double>(cloud.count());
  }
  return h;
}

double median_nn_spacing(const PointCloud& cloud) {
  const std::size_t n = cloud.count();
  if (n < 2) throw Error("nearest-neighbor spacing needs at least 2 points");
  // Sweep along x: candidates further than the best distance in x are skipped.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return cloud.positions[a].x() < cloud.positions[b].x(); });
  std::vector<double> nn(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.positions[order[i]];
    double best2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec3& q = cloud.positions[order[j]];
      const double dx = q.x() - p.x();
      if (dx * dx > best2) break;
      best2 = std::min(best2, (q - p).squaredNorm());
    }
    for (std::size_t j = i; j-- > 0;) {
      const Vec3& q = cloud.positions[order[j]];
      const double dx = p.x() - q.x();
      if (dx * dx > best2) break;
      best2 = std::min(best2, (q - p).squaredNorm());
    }
    nn[i] = std::sqrt(best2);
  }
  const std::size_t mid = n / 2;
  std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(mid), nn.end());
  double median = nn[mid];
  if (n % 2 == 0) {
    const double lower = *std::max_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median;
}

Schedule auto_schedule(const PointCloud& cloud, int num_local_levels) {
  if (cloud.count() < 2) throw Error("auto_schedule: need at least 2 points");
  const double spacing = median_nn_spacing(cloud);
  if (!(spacing > 0.0)) throw Error("auto_schedule: degenerate cloud (coincident points)");
  Schedule s;
  s.omega = 2.0 * spacing;
  s.gamma = 2.0;
  if (num_local_levels >= 2) {
    Mat3 axes = Mat3::Identity();
    if (cloud.count() >= 4) axes = compute_canonical_frame(cloud, 0.0).rotation;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& p : cloud.positions) {
      const Vec3 r = axes.transpose() * p;
      lo = lo.cwiseMin(r);
      hi = hi.cwiseMax(r);
    }
    const double target = (hi - lo).norm() / 8.0;
    const double gamma = std::pow(target / s.omega, 1.0 / (num_local_levels - 1));
    s.gamma = std::max(gamma, 1.5);
  }
  return s;
}

void dump_hierarchy(const PointHierarchy& hierarchy, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("cannot write manifest in '" + dir.string() + "'");
  manifest.precision(17);
  manifest << "omega " << hierarchy.schedule.omega << "\n";
  manifest << "gamma " << hierarchy.schedule.gamma << "\n";
  manifest << "global_center " << hierarchy.global_center.x() << ' ' << hierarchy.global_center.y() << ' '
           << hierarchy.global_center.z() << "\n";
  for (const auto& level : hierarchy.levels) {
    const std::string name = "level_" + std::to_string(level.level_index) + ".ply";
    save_point_cloud(dir / name, PointCloud{level.representatives});
    manifest << "level " << level.level_index << " edge " << level.voxel_edge << " points " << level.size()
             << " file " << name << "\n";
  }
}

}  // namespace mspnf
