// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale point hierarchy built by voxel-wise barycenter clustering.
#pragma once

#include "mspnf/scene_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mspnf {

using CellKey = std::array<std::int64_t, 3>;

/// Integer cell of `p` for cubic cells of edge `edge` anchored at the origin.
inline CellKey cell_of(const Vec3& p, double edge) {
  return {static_cast<std::int64_t>(std::floor(p.x() / edge)), static_cast<std::int64_t>(std::floor(p.y() / edge)),
          static_cast<std::int64_t>(std::floor(p.z() / edge))};
}

struct ScaleLevel {
  int level_index = 1;
  double voxel_edge = 1.0;
  std::vector<Vec3> representatives;
  /// Input points merged into each representative.
  std::vector<std::size_t> source_counts;

  std::size_t size() const { return representatives.size(); }
};

struct Schedule {
  double omega = 1.0;
  double gamma = 2.0;

  double edge(int level_index) const;
};

struct PointHierarchy {
  /// Local levels ordered fine to coarse; levels[i].level_index == i + 1.
  std::vector<ScaleLevel> levels;
  /// Representative of the global voxel: the mean of the input cloud.
  Vec3 global_center = Vec3::Zero();
  Schedule schedule;
};

/// One representative per non-empty cell, equal to the barycenter of the cell's
/// points. Output is sorted by cell key; members are summed in coordinate order
/// so the result does not depend on input order.
ScaleLevel grid_subsample(const PointCloud& cloud, double voxel_edge, int level_index = 1);

/// Levels 1..num_local_levels, each aggregated independently from `cloud`
/// with edge omega * gamma^(s-1).
PointHierarchy build_hierarchy(const PointCloud& cloud, double omega, double gamma, int num_local_levels);

/// omega = 2 x median nearest-neighbor spacing; gamma so the coarsest local
/// edge is 1/8 of the bounding-box diagonal in the PCA frame (floored at 1.5).
Schedule auto_schedule(const PointCloud& cloud, int num_local_levels);

/// Median nearest-neighbor distance (exact).
double median_nn_spacing(const PointCloud& cloud);

/// Writes level_<s>.ply per level and manifest.txt with edges and counts.
void dump_hierarchy(const PointHierarchy& hierarchy, const std::filesystem::path& dir);

}  // namespace mspnf
