#pragma once

// Synthetic sounding-object scenes: two coloured shapes of different kinds on
// a plain background, a pure tone keyed to the kind of the shape that
// "sounds", and that shape's pixel mask. The image alone cannot tell which
// of the two shapes is the answer; the tone can.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsam/audio.hpp"
#include "avsam/config.hpp"
#include "avsam/error.hpp"
#include "avsam/image_io.hpp"
#include "avsam/model.hpp"
#include "avsam/tensor.hpp"

namespace avsam::synth {

enum class ShapeKind : int { circle = 0, square = 1, triangle = 2 };

inline const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

/// splitmix64-based generator; reproducible on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  double normal() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  Rng r(a ^ (b * 0xD1B54A32D192ED03ULL));
  return r.next();
}

struct SceneShape {
  ShapeKind kind = ShapeKind::circle;
  double cx = 0.0, cy = 0.0;  // centre, pixels
  double size = 0.0;          // diameter / side / base width, pixels
  std::array<double, 3> color{1.0, 1.0, 1.0};

  /// Whether the pixel centre (x + 0.5, y + 0.5) lies inside the shape.
  bool covers(std::size_t x, std::size_t y) const {
    const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
    const double r = size / 2.0;
    switch (kind) {
      case ShapeKind::circle: return px * px + py * py <= r * r;
      case ShapeKind::square: return std::abs(px) <= r && std::abs(py) <= r;
      case ShapeKind::triangle: {
        // apex at top centre, base along the bottom edge
        if (py < -r || py > r) return false;
        const double half_width = r * (py + r) / (2.0 * r);
        return std::abs(px) <= half_width;
      }
    }
    return false;
  }
};

struct SceneSpec {
  std::size_t image_size = 64;
  std::vector<SceneShape> shapes;
  std::size_t sounding_index = 0;
  std::array<double, 3> tone_map{440.0, 880.0, 1320.0};  // indexed by ShapeKind
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  SpectrogramParams audio;

  std::vector<bool> raster(std::size_t i) const {
    std::vector<bool> m(image_size * image_size, false);
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) m[y * image_size + x] = shapes[i].covers(x, y);
    return m;
  }

  void validate() const {
    require(image_size > 0, "scene: image_size must be positive");
    require(!shapes.empty() && sounding_index < shapes.size(), "scene: sounding_index out of range");
    const double nyquist = audio.sample_rate / 2.0;
    for (double f : tone_map) require(f > 0.0 && f < nyquist, "scene: tone frequency must lie below Nyquist");
    const double n = static_cast<double>(image_size);
    for (const auto& s : shapes) {
      const double r = s.size / 2.0;
      require(s.size > 0 && s.cx - r >= 0 && s.cy - r >= 0 && s.cx + r <= n && s.cy + r <= n,
              "scene: shape extends outside the image");
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto ri = raster(i);
      require(std::find(ri.begin(), ri.end(), true) != ri.end(), "scene: shape covers no pixel");
      for (std::size_t j = i + 1; j < shapes.size(); ++j) {
        const auto rj = raster(j);
        for (std::size_t p = 0; p < ri.size(); ++p)
          require(!(ri[p] && rj[p]), "scene: shapes " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
      }
    }
  }
};

struct SyntheticSample {
  Tensor image;  // (3, H, W)
  Waveform audio;
  Tensor mask;  // (H, W)
};

inline constexpr double kBackground = 0.1;
inline constexpr double kToneAmplitude = 0.5;

inline SyntheticSample generate_sample(const SceneSpec& spec) {
  spec.validate();
  const std::size_t n = spec.image_size;
  SyntheticSample out;
  out.image = Tensor({3, n, n}, kBackground);
  out.mask = Tensor({n, n}, 0.0);
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto r = spec.raster(i);
    for (std::size_t p = 0; p < r.size(); ++p) {
      if (!r[p]) continue;
      for (std::size_t c = 0; c < 3; ++c) out.image[c * n * n + p] = spec.shapes[i].color[c];
      if (i == spec.sounding_index) out.mask[p] = 1.0;
    }
  }
  Rng rng(mix_seed(spec.seed, 0xA0D10));
  const double freq = spec.tone_map[static_cast<int>(spec.shapes[spec.sounding_index].kind)];
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  out.audio.sample_rate = spec.audio.sample_rate;
  out.audio.samples.resize(spec.audio.num_samples());
  for (std::size_t t = 0; t < out.audio.samples.size(); ++t) {
    const double s = kToneAmplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / spec.audio.sample_rate + phase) +
                     spec.noise_level * rng.normal();
    out.audio.samples[t] = std::clamp(s, -1.0, 1.0);
  }
  return out;
}

/// Two shapes of distinct kinds with a 2-pixel gap between bounding boxes.
/// The sounding kind is uniform over the three kinds.
inline SceneSpec random_scene(std::uint64_t seed, const Config& cfg) {
  Rng rng(seed);
  SceneSpec spec;
  spec.image_size = cfg.model.image_size;
  spec.noise_level = cfg.data.noise_level;
  spec.seed = seed;
  spec.audio = cfg.audio;
  const auto sounding = static_cast<ShapeKind>(rng.below(3));
  const auto other = static_cast<ShapeKind>((static_cast<int>(sounding) + 1 + static_cast<int>(rng.below(2))) % 3);
  const std::size_t slot = rng.below(2);
  const double n = static_cast<double>(spec.image_size);
  const double max_size = std::min(cfg.data.max_size, n / 2.0 - 2.0);
  const double min_size = std::min(cfg.data.min_size, max_size);
  for (int attempt = 0;; ++attempt) {
    require(attempt < 10000, "random_scene: could not place two non-overlapping shapes");
    spec.shapes.clear();
    for (int k = 0; k < 2; ++k) {
      SceneShape s;
      s.kind = (static_cast<std::size_t>(k) == slot) ? sounding : other;
      s.size = rng.uniform(min_size, max_size);
      s.cx = rng.uniform(s.size / 2.0, n - s.size / 2.0);
      s.cy = rng.uniform(s.size / 2.0, n - s.size / 2.0);
      for (double& c : s.color) c = rng.uniform(0.35, 1.0);
      spec.shapes.push_back(s);
    }
    const auto& a = spec.shapes[0];
    const auto& b = spec.shapes[1];
    const double gap = 2.0;
    const bool apart = std::abs(a.cx - b.cx) >= (a.size + b.size) / 2.0 + gap ||
                       std::abs(a.cy - b.cy) >= (a.size + b.size) / 2.0 + gap;
    if (apart) break;
  }
  spec.sounding_index = slot;
  return spec;
}

// --- manifests --------------------------------------------------------------

struct ManifestRecord {
  std::string id;
  std::string image_path;
  std::string audio_path;
  std::string mask_path;  // may be empty for train records
  std::string split;      // train | val | test
};

struct SampleManifest {
  std::vector<ManifestRecord> records;  // paths resolved against the manifest directory

  std::vector<ManifestRecord> split(const std::string& name) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (name.empty() || r.split == name) out.push_back(r);
    return out;
  }
};

inline SampleManifest load_manifest(const std::string& path) {
  require(std::filesystem::exists(path), "manifest not found: " + path);
  std::ifstream in(path);
  require(in.good(), "cannot open manifest: " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
  };
  SampleManifest m;
  std::vector<std::string> ids;
  std::string line, broken;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ContractError(where + ": malformed manifest line: " + e.what());
    }
    require(j.is_object(), where + ": manifest line is not a JSON object");
    auto field = [&](const char* k, bool required) -> std::string {
      if (!j.contains(k) || j[k].is_null()) {
        require(!required, where + ": missing field '" + k + "'");
        return {};
      }
      require(j[k].is_string(), where + ": field '" + k + "' must be a string");
      return j[k].get<std::string>();
    };
    ManifestRecord r;
    r.id = field("id", true);
    r.image_path = resolve(field("image_path", true));
    r.audio_path = resolve(field("audio_path", true));
    const std::string mask = field("mask_path", false);
    r.mask_path = mask.empty() ? std::string() : resolve(mask);
    r.split = field("split", true);
    require(r.split == "train" || r.split == "val" || r.split == "test",
            where + ": split must be train, val or test (got '" + r.split + "')");
    require(!r.id.empty(), where + ": empty id");
    require(std::find(ids.begin(), ids.end(), r.id) == ids.end(), where + ": duplicate id '" + r.id + "'");
    ids.push_back(r.id);
    if (r.split != "train" && r.mask_path.empty()) broken += " " + r.id + "(mask required for " + r.split + ")";
    for (const auto* p : {&r.image_path, &r.audio_path, &r.mask_path})
      if (!p->empty() && !std::filesystem::exists(*p)) broken += " " + r.id + "(missing " + *p + ")";
    m.records.push_back(std::move(r));
  }
  require(broken.empty(), "manifest " + path + " has broken records:" + broken);
  return m;
}

inline void write_manifest(const std::string& path, const SampleManifest& m) {
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto rel = [&base](const std::string& p) {
    return p.empty() ? std::string() : std::filesystem::path(p).lexically_relative(base.empty() ? "." : base).string();
  };
  std::ofstream out(path);
  require(out.good(), "cannot write manifest: " + path);
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["image_path"] = rel(r.image_path);
    j["audio_path"] = rel(r.audio_path);
    if (!r.mask_path.empty()) j["mask_path"] = rel(r.mask_path);
    j["split"] = r.split;
    out << j.dump() << '\n';
  }
  require(out.good(), "write failed: " + path);
}

inline std::string sample_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "s" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

/// 80/10/10 train/val/test assignment: ids ranked by a seeded hash, first
/// 80% train, next 10% val, rest test.
inline std::vector<std::string> assign_splits(const std::vector<std::string>& ids, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : ids[i]) h = (h ^ ch) * 1099511628211ULL;
    keyed.emplace_back(mix_seed(seed, h), i);
  }
  std::sort(keyed.begin(), keyed.end());
  const std::size_t n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  std::vector<std::string> split(n);
  for (std::size_t r = 0; r < n; ++r)
    split[keyed[r].second] = r < n_train ? "train" : (r < n_train + n_val ? "val" : "test");
  return split;
}

inline std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index) { return mix_seed(dataset_seed, index + 1); }

/// Writes n samples (images/, audio/, masks/ and manifest.jsonl) under out_dir.
inline SampleManifest generate_dataset(std::size_t n, const Config& cfg, const std::string& out_dir, std::uint64_t seed) {
  require(n >= 1, "generate_dataset: n must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "audio", "masks"}) {
    fs::create_directories(fs::path(out_dir) / sub, ec);
    require(!ec, "cannot create directory " + (fs::path(out_dir) / sub).string() + ": " + ec.message());
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(sample_id(i));
  const auto splits = assign_splits(ids, seed);
  SampleManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    const SceneSpec spec = random_scene(scene_seed(seed, i), cfg);
    const SyntheticSample s = generate_sample(spec);
    ManifestRecord r;
    r.id = ids[i];
    r.image_path = (fs::path(out_dir) / "images" / (ids[i] + ".png")).string();
    r.audio_path = (fs::path(out_dir) / "audio" / (ids[i] + ".wav")).string();
    r.mask_path = (fs::path(out_dir) / "masks" / (ids[i] + ".png")).string();
    r.split = splits[i];
    image_io::save_rgb(r.image_path, s.image);
    save_waveform(r.audio_path, s.audio);
    image_io::save_mask(r.mask_path, s.mask);
    m.records.push_back(std::move(r));
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

/// Decodes records into model-ready examples (spectrogram, image, mask).
inline std::vector<Example> load_examples(const std::vector<ManifestRecord>& records, const Config& cfg) {
  std::vector<Example> out;
  out.reserve(records.size());
  const std::size_t n = cfg.model.image_size;
  for (const auto& r : records) {
    require(!r.mask_path.empty(), "record " + r.id + " has no mask");
    Example e;
    e.id = r.id;
    e.image = image_io::load_rgb(r.image_path);
    require_shape(e.image, {3, n, n}, "image " + r.image_path);
    e.spectrogram = compute_log_spectrogram(load_waveform(r.audio_path, cfg.audio), cfg.audio).values;
    e.mask = image_io::load_mask(r.mask_path);
    require_shape(e.mask, {n, n}, "mask " + r.mask_path);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace avsam::synth
