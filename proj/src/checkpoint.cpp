// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/checkpoint.hpp"

#include "mspnf/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mspnf {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'P', 'N', 'F', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

 private:
  void bytes(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("checkpoint: truncated file");
    return s;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char b[8];
    if (!in_.read(reinterpret_cast<char*>(b), n)) throw ParseError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

}  // namespace

const NamedTensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  // Write to a sibling and rename so a crash never leaves a torn checkpoint.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + tmp + "'");
    Writer w(out);
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);
    w.u64(fnv1a64(file.config_text));
    w.u64(file.step);
    w.u32(static_cast<std::uint32_t>(file.config_text.size()));
    w.raw(file.config_text.data(), file.config_text.size());
    w.u32(static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& t : file.tensors) {
      std::uint64_t expect = 1;
      for (auto d : t.shape) expect *= d;
      if (expect != t.values.size()) throw Error("checkpoint: tensor '" + t.name + "' shape does not match its size");
      w.u32(static_cast<std::uint32_t>(t.name.size()));
      w.raw(t.name.data(), t.name.size());
      w.u32(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.u64(d);
      for (double v : t.values) w.f64(v);
    }
    if (!out) throw Error("write failed for checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  Reader r(in);
  if (r.text(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw ParseError("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(v));
  }
  const std::uint64_t hash = r.u64();
  CheckpointFile file;
  file.step = r.u64();
  file.config_text = r.text(r.u32());
  if (fnv1a64(file.config_text) != hash) throw ParseError("checkpoint: config hash mismatch");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.text(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw ParseError("checkpoint: tensor '" + t.name + "' has implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u64());
      n *= t.shape.back();
    }
    if (n > (1ULL << 32)) throw ParseError("checkpoint: tensor '" + t.name + "' is implausibly large");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f64();
    file.tensors.push_back(std::move(t));
  }
  return file;
}

}  // namespace mspnf
