// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mspnf {

namespace {

template <typename Map>
void build_csr(const std::map<CellKey, std::vector<std::uint32_t>>& buckets, Map& table,
               std::vector<std::uint32_t>& members) {
  table.reserve(buckets.size());
  for (const auto& [key, list] : buckets) {
    table.emplace(key, typename Map::mapped_type{static_cast<std::uint32_t>(members.size()),
                                                 static_cast<std::uint32_t>(list.size())});
    members.insert(members.end(), list.begin(), list.end());
  }
}

}  // namespace

VoxelHashIndex::VoxelHashIndex(const ScaleLevel& level)
    : level_index_(level.level_index), voxel_edge_(level.voxel_edge), points_(level.representatives) {
  std::map<CellKey, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t i = 0; i < points_.size(); ++i) buckets[cell_of(points_[i], voxel_edge_)].push_back(i);
  build_csr(buckets, cells_, members_);

  std::map<CellKey, std::vector<std::uint32_t>> dilated;
  for (const auto& [key, list] : buckets) {
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto& dst = dilated[{key[0] + dx, key[1] + dy, key[2] + dz}];
          dst.insert(dst.end(), list.begin(), list.end());
        }
      }
    }
  }
  build_csr(dilated, dilated_, dilated_members_);
}

std::span<const std::uint32_t> VoxelHashIndex::cell(const CellKey& key) const {
  const auto it = cells_.find(key);
  if (it == cells_.end()) return {};
  return {members_.data() + it->second.begin, it->second.count};
}

std::vector<CellKey> VoxelHashIndex::cell_keys() const {
  std::vector<CellKey> keys;
  keys.reserve(cells_.size());
  for (const auto& kv : cells_) keys.push_back(kv.first);
  std::sort(keys.begin(), keys.end());
  return keys;
}

void VoxelHashIndex::collect(const Vec3& q, double radius, std::span<const std::uint32_t> candidates,
                             std::vector<std::pair<double, std::uint32_t>>& out) const {
  for (std::uint32_t idx : candidates) {
    const double d = (points_[idx] - q).norm();
    if (d <= radius) out.emplace_back(d, idx);
  }
}

NeighborSet VoxelHashIndex::ball_query(const Vec3& q, double tau, int max_neighbors) const {
  NeighborSet result;
  result.level_index = level_index_;
  if (points_.empty()) return result;

  const double radius = tau * voxel_edge_;
  const CellKey center = cell_of(q, voxel_edge_);
  thread_local std::vector<std::pair<double, std::uint32_t>> found;
  found.clear();
  if (tau <= 1.0) {
    const auto it = dilated_.find(center);
    if (it == dilated_.end()) return result;
    collect(q, radius, {dilated_members_.data() + it->second.begin, it->second.count}, found);
  } else {
    const auto shell = static_cast<std::int64_t>(std::ceil(tau));
    for (std::int64_t dx = -shell; dx <= shell; ++dx) {
      for (std::int64_t dy = -shell; dy <= shell; ++dy) {
        for (std::int64_t dz = -shell; dz <= shell; ++dz) {
          collect(q, radius, cell({center[0] + dx, center[1] + dy, center[2] + dz}), found);
        }
      }
    }
  }
  const std::size_t keep = std::min(found.size(), static_cast<std::size_t>(std::max(max_neighbors, 0)));
  std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(keep), found.end());
  result.point_indices.reserve(keep);
  result.distances.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    result.distances.push_back(found[i].first);
    result.point_indices.push_back(found[i].second);
  }
  return result;
}

std::vector<VoxelHashIndex> build_indices(const PointHierarchy& hierarchy) {
  std::vector<VoxelHashIndex> out;
  out.reserve(hierarchy.levels.size());
  for (const auto& level : hierarchy.levels) out.emplace_back(level);
  return out;
}

std::vector<NeighborSet> valid_scales(std::span<const VoxelHashIndex> indices, const Vec3& q, double tau,
                                      int max_neighbors, bool include_global) {
  std::vector<NeighborSet> out;
  out.reserve(indices.size() + 1);
  for (const auto& index : indices) {
    NeighborSet n = index.ball_query(q, tau, max_neighbors);
    if (!n.empty()) out.push_back(std::move(n));
  }
  std::sort(out.begin(), out.end(), [](const NeighborSet& a, const NeighborSet& b) { return a.level_index < b.level_index; });
  if (include_global) out.push_back(NeighborSet{0, {}, {}});
  return out;
}

}  // namespace mspnf
