// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian flat binary checkpoints.
//
//   magic "MSPNFCKP" | u32 version | u64 config hash | u64 step
//   u32 config length | config text
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//                                  u64 dims[rank], f64 payload
//
// Tensor names partition the file: "geometry.*" holds the hierarchy and
// canonical frame, "adam.m.*" / "adam.v.*" the optimizer moments, everything
// else the field parameters.
#pragma once

#include "mspnf/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mspnf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

struct CheckpointFile {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
/// Throws ParseError on bad magic/version, truncation, or a config-hash mismatch.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace mspnf
