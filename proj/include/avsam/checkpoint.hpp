#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   8 bytes   magic "AVSAMCKP"
//   u32       format version (currently 1)
//   u64       architecture config hash
//   u64       optimizer step counter
//   u32 + N   config text (key = value lines)
//   u32       array count
//   per array:
//     u32 + N   name ("param:<name>", "adam_m:<name>" or "adam_v:<name>")
//     u32       rank, then u64 per dimension
//     f64 * numel  values

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "avsam/audio.hpp"
#include "avsam/config.hpp"
#include "avsam/error.hpp"
#include "avsam/model.hpp"
#include "avsam/params.hpp"

namespace avsam {

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'S', 'A', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::string config_text;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace ckpt_detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void f64(double d) { le(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::string origin) : buf_(b), origin_(std::move(origin)) {}
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw ContractError("checkpoint " + origin_ + " is truncated or corrupt");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const std::vector<unsigned char>& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline void put_array(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.le(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) w.le(static_cast<std::uint64_t>(d));
  for (double v : t.data) w.f64(v);
}

}  // namespace ckpt_detail

inline std::vector<unsigned char> serialize_checkpoint(const Checkpoint& c) {
  ckpt_detail::Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.le(kCheckpointVersion);
  w.le(c.config_hash);
  w.le(c.step);
  w.str(c.config_text);
  w.le(static_cast<std::uint32_t>(c.params.all().size() + c.adam_m.size() + c.adam_v.size()));
  for (const auto& [n, t] : c.params.all()) ckpt_detail::put_array(w, "param:" + n, t);
  for (const auto& [n, t] : c.adam_m) ckpt_detail::put_array(w, "adam_m:" + n, t);
  for (const auto& [n, t] : c.adam_v) ckpt_detail::put_array(w, "adam_v:" + n, t);
  return std::move(w.out);
}

inline Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin) {
  ckpt_detail::Reader r(bytes, origin);
  char magic[8];
  r.raw(magic, 8);
  require(std::memcmp(magic, kCheckpointMagic, 8) == 0, "checkpoint " + origin + ": bad magic, not a checkpoint file");
  const auto version = r.le<std::uint32_t>();
  require(version == kCheckpointVersion, "checkpoint " + origin + ": unsupported format version " + std::to_string(version) +
                                             " (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  c.config_hash = r.le<std::uint64_t>();
  c.step = r.le<std::uint64_t>();
  c.config_text = r.str();
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto rank = r.le<std::uint32_t>();
    require(rank <= 8, "checkpoint " + origin + ": implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
    const std::size_t n = shape_numel(shape);
    r.need(n * 8);
    Tensor t(shape);
    for (std::size_t k = 0; k < n; ++k) t[k] = r.f64();
    const auto colon = name.find(':');
    require(colon != std::string::npos, "checkpoint " + origin + ": malformed array name " + name);
    const std::string kind = name.substr(0, colon), key = name.substr(colon + 1);
    if (kind == "param") c.params.add(key, std::move(t));
    else if (kind == "adam_m") c.adam_m.emplace(key, std::move(t));
    else if (kind == "adam_v") c.adam_v.emplace(key, std::move(t));
    else throw ContractError("checkpoint " + origin + ": unknown array kind " + kind);
  }
  require(r.at_end(), "checkpoint " + origin + ": trailing bytes after last array");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path), path); }

/// Fresh checkpoint (zero optimizer moments) around a model.
inline Checkpoint make_checkpoint(const Model& m) {
  Checkpoint c;
  c.params = m.params;
  for (const auto& [n, t] : m.params.all()) {
    c.adam_m.emplace(n, Tensor(t.shape, 0.0));
    c.adam_v.emplace(n, Tensor(t.shape, 0.0));
  }
  c.config_hash = m.cfg.architecture_hash();
  c.config_text = m.cfg.dump();
  return c;
}

/// Config stored inside a checkpoint.
inline Config checkpoint_config(const Checkpoint& c) {
  Config cfg;
  std::istringstream is(c.config_text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    cfg.set(line.substr(0, eq), line.substr(eq + 3));
  }
  return cfg;
}

/// Model from a checkpoint; refuses checkpoints written for another
/// architecture.
inline Model restore_model(const Checkpoint& c, const Config& cfg) {
  require(c.config_hash == cfg.architecture_hash(),
          "checkpoint was written for a different model configuration (config hash " + std::to_string(c.config_hash) +
              " != " + std::to_string(cfg.architecture_hash()) + ")");
  Model m = Model::init(cfg);
  for (auto& [name, t] : m.params.all()) {
    require(c.params.contains(name), "checkpoint lacks parameter " + name);
    require(c.params.at(name).shape == t.shape, "checkpoint parameter " + name + " has the wrong shape");
    t = c.params.at(name);
  }
  require(c.params.all().size() == m.params.all().size(), "checkpoint has parameters this model does not");
  return m;
}

}  // namespace avsam
