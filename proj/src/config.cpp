// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace mspnf {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view text, std::string_view key) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ParseError("invalid number '" + std::string(text) + "' for key '" + std::string(key) + "'");
  }
  return v;
}

template <typename Int>
Int parse_integer(std::string_view text, std::string_view key) {
  text = trim(text);
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("invalid integer '" + std::string(text) + "' for key '" + std::string(key) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text, std::string_view source) {
  std::vector<KeyValue> out;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? text.size() - start : end - start);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(std::string(source) + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
      if (kv.key.empty()) {
        throw ParseError(std::string(source) + ":" + std::to_string(line_no) + ": empty key");
      }
      out.push_back(std::move(kv));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

KeyValue parse_override(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || trim(text.substr(0, eq)).empty()) {
    throw ParseError("override '" + std::string(text) + "' is not of the form key=value");
  }
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1))), 0};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest text that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[64];
    std::snprintf(tmp, sizeof(tmp), "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

std::string format_vec3(const Vec3& v) {
  return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
}

Vec3 parse_vec3(std::string_view text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw ParseError("expected three comma-separated numbers, got '" + std::string(text) + "'");
  return {parse_double(parts[0], "vec3"), parse_double(parts[1], "vec3"), parse_double(parts[2], "vec3")};
}

std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  if (trim(text).empty()) return out;
  for (auto p : split(text, ',')) out.push_back(parse_integer<int>(p, "list"));
  return out;
}

// ---------------------------------------------------------------------------
// Schema

void Schema::add(std::string key, int* field, std::string doc) {
  entries_.push_back({key, std::move(doc), [field, key](const std::string& v) { *field = parse_integer<int>(v, key); },
                      [field] { return std::to_string(*field); }});
}

void Schema::add(std::string key, std::uint64_t* field, std::string doc) {
  entries_.push_back({key, std::move(doc),
                      [field, key](const std::string& v) { *field = parse_integer<std::uint64_t>(v, key); },
                      [field] { return std::to_string(*field); }});
}

void Schema::add(std::string key, double* field, std::string doc) {
  entries_.push_back({key, std::move(doc), [field, key](const std::string& v) { *field = parse_double(v, key); },
                      [field] { return format_double(*field); }});
}

void Schema::add(std::string key, bool* field, std::string doc) {
  entries_.push_back({key, std::move(doc),
                      [field, key](const std::string& v) {
                        const auto t = trim(v);
                        if (t == "1" || t == "true") {
                          *field = true;
                        } else if (t == "0" || t == "false") {
                          *field = false;
                        } else {
                          throw ParseError("invalid boolean '" + v + "' for key '" + key + "'");
                        }
                      },
                      [field] { return std::string(*field ? "1" : "0"); }});
}

void Schema::add(std::string key, std::string* field, std::string doc) {
  entries_.push_back({key, std::move(doc), [field](const std::string& v) { *field = std::string(trim(v)); },
                      [field] { return *field; }});
}

void Schema::add(std::string key, Vec3* field, std::string doc) {
  entries_.push_back({key, std::move(doc), [field](const std::string& v) { *field = parse_vec3(v); },
                      [field] { return format_vec3(*field); }});
}

void Schema::add(std::string key, std::vector<int>* field, std::string doc) {
  entries_.push_back({key, std::move(doc), [field](const std::string& v) { *field = parse_int_list(v); },
                      [field] {
                        std::string s;
                        for (std::size_t i = 0; i < field->size(); ++i) {
                          if (i) s += ",";
                          s += std::to_string((*field)[i]);
                        }
                        return s;
                      }});
}

bool Schema::contains(std::string_view key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
}

const Schema::Entry& Schema::find(std::string_view key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return e;
  }
  std::string msg = "unknown key '" + std::string(key) + "'; valid keys:";
  for (const auto& e : entries_) msg += " " + e.key;
  throw ParseError(msg);
}

void Schema::set(const std::string& key, const std::string& value) { find(key).set(value); }

std::string Schema::get(const std::string& key) const { return find(key).get(); }

void Schema::apply(const std::vector<KeyValue>& entries) {
  for (const auto& kv : entries) {
    try {
      set(kv.key, kv.value);
    } catch (const ParseError& e) {
      if (kv.line > 0) throw ParseError("line " + std::to_string(kv.line) + ": " + e.what());
      throw;
    }
  }
}

std::vector<std::string> Schema::keys() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.key);
  return out;
}

std::string Schema::dump() const {
  std::string out;
  for (const auto& e : entries_) out += e.key + " = " + e.get() + "\n";
  return out;
}

std::string Schema::documentation() const {
  std::string out;
  for (const auto& e : entries_) out += e.key + " (default " + e.get() + "): " + e.doc + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ParseError("invalid configuration: " + what);
  };
  require(hierarchy.num_local_levels >= 0, "num_local_levels must be >= 0");
  require(hierarchy.omega <= 0.0 || hierarchy.gamma <= 0.0 || hierarchy.gamma > 1.0, "gamma must be > 1");
  require(hierarchy.canonical == "pca" || hierarchy.canonical == "fixed", "canonical must be 'pca' or 'fixed'");
  require((hierarchy.frame_scale.array() > 0.0).all(), "frame_scale components must be > 0");
  require(hierarchy.frame_margin >= 0.0, "frame_margin must be >= 0");
  require(field.feature_dim >= 1, "feature_dim must be >= 1");
  require(field.mlp_width >= 1 && field.decoder_width >= 1, "MLP widths must be >= 1");
  require(field.mlp_layers >= 1 && field.decoder_layers >= 1, "MLP layer counts must be >= 1");
  require(field.triplane_levels >= 0, "triplane_levels must be >= 0");
  require(!field.point_triplane_res.empty(), "point_triplane_res must not be empty");
  for (int r : field.point_triplane_res) require(r >= 2, "tri-plane resolutions must be >= 2");
  require(field.global_triplane_res >= 2, "global_triplane_res must be >= 2");
  require(field.pos_freqs >= 0 && field.dir_freqs >= 0, "frequency counts must be >= 0");
  require(field.tau > 0.0, "tau must be > 0");
  require(field.max_neighbors >= 1, "max_neighbors must be >= 1");
  require(field.epsilon > 0.0, "epsilon must be > 0");
  require(render.num_samples >= 2, "num_samples must be >= 2");
  require(train.iterations >= 0, "iterations must be >= 0");
  require(train.batch_rays >= 1, "batch_rays must be >= 1");
  require(train.lr_decoder > 0.0 && train.lr_features > 0.0, "learning rates must be > 0");
  require(train.decay_rate > 0.0 && train.decay_rate <= 1.0, "decay_rate must be in (0, 1]");
  require(train.decay_every > 0.0, "decay_every must be > 0");
  require(train.decay_mode == "continuous" || train.decay_mode == "step", "decay_mode must be continuous|step");
  require(train.optimizer == "adam" || train.optimizer == "sgd", "optimizer must be adam|sgd");
  require(train.point_ratio >= 0.0 && train.point_ratio <= 1.0, "point_ratio must be in [0, 1]");
  require(workers >= 0, "workers must be >= 0");
}

Schema make_schema(RunConfig& c) {
  Schema s;
  auto& h = c.hierarchy;
  s.add("num_local_levels", &h.num_local_levels, "local scale levels below the global voxel");
  s.add("omega", &h.omega, "finest voxel edge in world units (<= 0: automatic)");
  s.add("gamma", &h.gamma, "voxel edge growth per level (<= 0: automatic)");
  s.add("canonical", &h.canonical, "global frame: pca | fixed");
  s.add("frame_translation", &h.frame_translation, "fixed frame translation (world + t)");
  s.add("frame_scale", &h.frame_scale, "fixed frame per-axis half extent");
  s.add("frame_margin", &h.frame_margin, "relative margin of the PCA frame box");

  auto& f = c.field;
  s.add("feature_dim", &f.feature_dim, "feature vector length D");
  s.add("mlp_width", &f.mlp_width, "hidden width of the per-level feature MLP");
  s.add("mlp_layers", &f.mlp_layers, "linear layers in the per-level feature MLP");
  s.add("triplane_levels", &f.triplane_levels, "coarsest local levels using per-point tri-planes");
  s.add("point_triplane_res", &f.point_triplane_res, "per-point tri-plane pyramid resolutions");
  s.add("global_triplane_res", &f.global_triplane_res, "global tri-plane resolution");
  s.add("use_global", &f.use_global, "include the global voxel level");
  s.add("pos_freqs", &f.pos_freqs, "positional-encoding frequencies for the global level");
  s.add("dir_freqs", &f.dir_freqs, "view-direction encoding frequencies");
  s.add("decoder_width", &f.decoder_width, "hidden width of the color head");
  s.add("decoder_layers", &f.decoder_layers, "linear layers in the color head");
  s.add("tau", &f.tau, "neighborhood radius as a multiple of the voxel edge");
  s.add("max_neighbors", &f.max_neighbors, "neighbors kept per level");
  s.add("epsilon", &f.epsilon, "inverse-distance weight offset (world units)");
  s.add("feature_init", &f.feature_init, "point features ~ U(-a, a)");
  s.add("triplane_init", &f.triplane_init, "tri-plane entries ~ U(-a, a)");

  s.add("num_samples", &c.render.num_samples, "quadrature samples per ray");
  s.add("background", &c.render.background, "background color r,g,b");

  auto& t = c.train;
  s.add("iterations", &t.iterations, "optimizer steps");
  s.add("batch_rays", &t.batch_rays, "rays per step");
  s.add("lr_decoder", &t.lr_decoder, "initial learning rate of network weights");
  s.add("lr_features", &t.lr_features, "initial learning rate of point/tri-plane features");
  s.add("decay_rate", &t.decay_rate, "learning-rate decay factor");
  s.add("decay_every", &t.decay_every, "steps per decay_rate factor");
  s.add("decay_mode", &t.decay_mode, "continuous | step");
  s.add("beta1", &t.beta1, "Adam first-moment decay");
  s.add("beta2", &t.beta2, "Adam second-moment decay");
  s.add("adam_eps", &t.adam_eps, "Adam denominator epsilon");
  s.add("optimizer", &t.optimizer, "adam | sgd");
  s.add("seed", &t.seed, "run seed");
  s.add("checkpoint_every", &t.checkpoint_every, "checkpoint cadence in steps (0: final only)");
  s.add("eval_every", &t.eval_every, "held-out evaluation cadence in steps (0: final only)");
  s.add("point_ratio", &t.point_ratio, "fraction of input points kept");
  s.add("workers", &c.workers, "worker threads (0: all cores)");
  return s;
}

RunConfig resolve_config(const std::string& config_text, const std::vector<KeyValue>& overrides) {
  RunConfig config;
  Schema schema = make_schema(config);
  schema.apply(parse_key_values(config_text));
  schema.apply(overrides);
  config.validate();
  return config;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace mspnf
