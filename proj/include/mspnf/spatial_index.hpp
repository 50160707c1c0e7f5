// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Voxel-hash ball queries over one scale level, and the valid-scale set.
#pragma once

#include "mspnf/hierarchy.hpp"

#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mspnf {

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k[1]) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k[2]) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

/// Neighbors of a query at one level, nearest first (ties by point index).
struct NeighborSet {
  int level_index = 0;
  std::vector<std::uint32_t> point_indices;
  std::vector<double> distances;

  std::size_t size() const { return point_indices.size(); }
  bool empty() const { return point_indices.empty(); }
};

class VoxelHashIndex {
 public:
  VoxelHashIndex() = default;
  explicit VoxelHashIndex(const ScaleLevel& level);

  int level_index() const { return level_index_; }
  double voxel_edge() const { return voxel_edge_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// Points with ||p - q|| <= tau * edge, truncated to the `max_neighbors`
  /// nearest. Scans the cells within ceil(tau) of q's cell.
  NeighborSet ball_query(const Vec3& q, double tau, int max_neighbors) const;

  /// Indices stored in one cell (empty span for unoccupied cells).
  std::span<const std::uint32_t> cell(const CellKey& key) const;
  /// Occupied cells in ascending key order.
  std::vector<CellKey> cell_keys() const;

 private:
  struct Range {
    std::uint32_t begin = 0;
    std::uint32_t count = 0;
  };
  using CellMap = std::unordered_map<CellKey, Range, CellKeyHash>;

  void collect(const Vec3& q, double radius, std::span<const std::uint32_t> candidates,
               std::vector<std::pair<double, std::uint32_t>>& out) const;

  int level_index_ = 0;
  double voxel_edge_ = 1.0;
  std::vector<Vec3> points_;
  CellMap cells_;
  std::vector<std::uint32_t> members_;
  // For each cell touching an occupied cell's 27-neighborhood: the union of
  // those neighbors' members, so tau <= 1 queries need a single lookup.
  CellMap dilated_;
  std::vector<std::uint32_t> dilated_members_;
};

std::vector<VoxelHashIndex> build_indices(const PointHierarchy& hierarchy);

/// Local levels with a non-empty neighborhood at q (ascending level index),
/// followed by the global level 0 with an empty NeighborSet.
std::vector<NeighborSet> valid_scales(std::span<const VoxelHashIndex> indices, const Vec3& q, double tau,
                                      int max_neighbors, bool include_global = true);

}  // namespace mspnf
