// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text `key = value` configuration: parsing, a typed key registry, and
// the resolved run configuration shared by every subcommand.
#pragma once

#include "mspnf/common.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mspnf {

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
std::vector<KeyValue> parse_key_values(std::string_view text, std::string_view source = "<config>");

/// Splits a single `key=value` override.
KeyValue parse_override(std::string_view text);

std::string read_text_file(const std::string& path);

/// Typed registry of configuration keys bound to struct fields.
///
/// Unknown keys are rejected with the complete list of valid keys; values that
/// fail to parse report the key and the offending text.
class Schema {
 public:
  void add(std::string key, int* field, std::string doc);
  void add(std::string key, std::uint64_t* field, std::string doc);
  void add(std::string key, double* field, std::string doc);
  void add(std::string key, bool* field, std::string doc);
  void add(std::string key, std::string* field, std::string doc);
  void add(std::string key, Vec3* field, std::string doc);
  void add(std::string key, std::vector<int>* field, std::string doc);

  bool contains(std::string_view key) const;
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void apply(const std::vector<KeyValue>& entries);

  std::vector<std::string> keys() const;
  /// Resolved config as `key = value` lines in registration order.
  std::string dump() const;
  /// One line per key: `key  (default)  description`.
  std::string documentation() const;

 private:
  struct Entry {
    std::string key;
    std::string doc;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };
  const Entry& find(std::string_view key) const;
  std::vector<Entry> entries_;
};

std::string format_double(double v);
std::string format_vec3(const Vec3& v);
Vec3 parse_vec3(std::string_view text);
std::vector<int> parse_int_list(std::string_view text);

struct HierarchyConfig {
  int num_local_levels = 4;
  /// Finest voxel edge; <= 0 selects the automatic schedule.
  double omega = 0.0;
  /// Edge growth ratio per level; <= 0 selects the automatic schedule.
  double gamma = 0.0;
  /// "pca" or "fixed" (identity rotation with frame_translation/frame_scale).
  std::string canonical = "pca";
  Vec3 frame_translation = Vec3::Zero();
  Vec3 frame_scale = Vec3::Ones();
  double frame_margin = 0.01;
};

struct FieldConfig {
  int feature_dim = 32;
  int mlp_width = 64;
  int mlp_layers = 4;
  /// Number of coarsest local levels that use per-point tri-planes.
  int triplane_levels = 2;
  std::vector<int> point_triplane_res{4, 2};
  int global_triplane_res = 64;
  bool use_global = true;
  int pos_freqs = 5;
  int dir_freqs = 4;
  int decoder_width = 64;
  int decoder_layers = 4;
  double tau = 1.0;
  int max_neighbors = 8;
  double epsilon = 1e-6;
  double feature_init = 1e-2;
  double triplane_init = 1e-1;
};

struct RenderConfig {
  int num_samples = 64;
  Vec3 background = Vec3::Ones();
};

struct TrainConfig {
  int iterations = 2000;
  int batch_rays = 1024;
  double lr_decoder = 5e-4;
  double lr_features = 2e-3;
  double decay_rate = 0.1;
  double decay_every = 1e6;
  /// "continuous" or "step".
  std::string decay_mode = "continuous";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// "adam" or "sgd".
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  int eval_every = 0;
  /// Fraction of the input cloud kept (random subset, seeded).
  double point_ratio = 1.0;
};

struct RunConfig {
  HierarchyConfig hierarchy;
  FieldConfig field;
  RenderConfig render;
  TrainConfig train;
  /// 0 = all available cores.
  int workers = 0;

  void validate() const;
};

/// Registers every RunConfig key. The schema holds pointers into `config`.
Schema make_schema(RunConfig& config);

/// defaults < config text < overrides.
RunConfig resolve_config(const std::string& config_text, const std::vector<KeyValue>& overrides);

/// Stable 64-bit FNV-1a hash of a text blob (used to tag checkpoints).
std::uint64_t fnv1a64(std::string_view text);

int resolve_workers(int requested);

}  // namespace mspnf
