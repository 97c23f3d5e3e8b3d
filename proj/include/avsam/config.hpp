#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avsam/error.hpp"

namespace avsam {

struct SpectrogramParams {
  int sample_rate = 22050;
  double duration_s = 3.0;
  int n_fft = 512;
  int hop = 220;
  int win_length = 512;
  double eps = 1e-10;

  std::size_t num_samples() const { return static_cast<std::size_t>(std::llround(sample_rate * duration_s)); }
  std::size_t num_bins() const { return static_cast<std::size_t>(n_fft / 2 + 1); }
  std::size_t num_frames() const { return num_samples() / static_cast<std::size_t>(hop); }
};

struct ModelConfig {
  std::size_t D = 32;
  std::size_t S = 3;
  std::size_t image_size = 64;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> audio_channels{8, 16, 32, 32};
  std::uint64_t seed = 0;
  std::size_t decoder_blocks = 2;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 2;
  bool fusion_softmax = false;
  bool zero_init_mu = false;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct EvalConfig {
  double beta_sq = 0.3;
  double threshold = 0.5;
  bool per_image_ap = false;
};

struct DataConfig {
  double noise_level = 0.05;
  double min_size = 16.0;
  double max_size = 24.0;
};

/// Full run configuration. Loaded from flat `key = value` files; unknown keys
/// are rejected.
struct Config {
  SpectrogramParams audio;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;

  /// Desk-scale model used for gradient verification: D=8 on 16x16 images with
  /// a 33x30 spectrogram. Two stages keep the coarsest grid at 2x2, so the
  /// decoder's attention has more than one key to weigh.
  static Config tiny() {
    Config c;
    c.model.D = 8;
    c.model.S = 2;
    c.model.image_size = 16;
    c.model.stem_channels = 4;
    c.model.audio_channels = {4, 4, 8, 8};
    c.model.decoder_heads = 2;
    c.audio.n_fft = 64;
    c.audio.win_length = 64;
    c.audio.hop = 2205;
    return c;
  }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void load_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      require(eq != std::string::npos, path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// Canonical text of the architecture-defining keys; the checkpoint guard
  /// hashes this.
  std::string architecture_text() const {
    std::ostringstream os;
    for (const char* k : {"audio.sr", "audio.duration_s", "audio.n_fft", "audio.hop", "audio.win_length", "model.D",
                          "model.S", "model.image_size", "model.stem_channels", "model.audio_channels",
                          "decoder.blocks", "decoder.heads", "decoder.mlp_ratio", "fusion.softmax"})
      os << k << '=' << get(k) << '\n';
    return os.str();
  }

  std::uint64_t architecture_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : architecture_text()) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return h;
  }

  /// Every key as `key = value` lines, in registry order.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k << " = " << get(k) << '\n';
    return os.str();
  }

  void validate() const {
    require(audio.sample_rate > 0 && audio.duration_s > 0, "audio.sr and audio.duration_s must be positive");
    require(audio.n_fft >= 2 && audio.hop >= 1 && audio.win_length >= 1 && audio.win_length <= audio.n_fft,
            "audio: need n_fft >= win_length >= 1 and hop >= 1");
    require(model.D >= 4 && model.D % 4 == 0, "model.D must be a positive multiple of 4");
    require(model.S >= 1, "model.S must be >= 1");
    require(model.image_size % (std::size_t{1} << (model.S + 1)) == 0,
            "model.image_size must be divisible by 2^(S+1)");
    require(model.audio_channels.size() == 4, "model.audio_channels must list 4 widths");
    require(model.decoder_heads >= 1 && model.D % model.decoder_heads == 0, "decoder.heads must divide model.D");
    require(train.lr > 0, "train.lr must be positive");
    require(train.batch_size >= 1, "train.batch_size must be >= 1");
    require(eval.beta_sq > 0, "eval.beta_sq must be positive");
  }
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  require(!is.fail() && (is >> std::ws).eof(), "invalid value for " + key + ": '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ContractError("invalid boolean for " + key + ": '" + s + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(parse_value<std::size_t>(key, tok));
  return out;
}

template <class T>
std::string fmt(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& registry() {
  static const std::vector<std::pair<std::string, Field>> reg = [] {
    std::vector<std::pair<std::string, Field>> r;
    auto num = [&r](std::string key, auto getter) {
      r.emplace_back(key, Field{[key, getter](Config& c, const std::string& v) {
                                  auto& ref = getter(c);
                                  ref = parse_value<std::remove_reference_t<decltype(ref)>>(key, v);
                                },
                                [getter](const Config& c) { return fmt(getter(const_cast<Config&>(c))); }});
    };
    auto flag = [&r](std::string key, auto getter) {
      r.emplace_back(key, Field{[key, getter](Config& c, const std::string& v) { getter(c) = parse_bool(key, v); },
                                [getter](const Config& c) {
                                  return std::string(getter(const_cast<Config&>(c)) ? "true" : "false");
                                }});
    };
    num("audio.sr", [](Config& c) -> auto& { return c.audio.sample_rate; });
    num("audio.duration_s", [](Config& c) -> auto& { return c.audio.duration_s; });
    num("audio.n_fft", [](Config& c) -> auto& { return c.audio.n_fft; });
    num("audio.hop", [](Config& c) -> auto& { return c.audio.hop; });
    num("audio.win_length", [](Config& c) -> auto& { return c.audio.win_length; });
    num("model.D", [](Config& c) -> auto& { return c.model.D; });
    num("model.S", [](Config& c) -> auto& { return c.model.S; });
    num("model.image_size", [](Config& c) -> auto& { return c.model.image_size; });
    num("model.stem_channels", [](Config& c) -> auto& { return c.model.stem_channels; });
    r.emplace_back("model.audio_channels",
                   Field{[](Config& c, const std::string& v) { c.model.audio_channels = parse_list("model.audio_channels", v); },
                         [](const Config& c) {
                           std::string s;
                           for (std::size_t i = 0; i < c.model.audio_channels.size(); ++i)
                             s += (i ? "," : "") + std::to_string(c.model.audio_channels[i]);
                           return s;
                         }});
    num("model.seed", [](Config& c) -> auto& { return c.model.seed; });
    flag("model.zero_init_mu", [](Config& c) -> auto& { return c.model.zero_init_mu; });
    num("decoder.blocks", [](Config& c) -> auto& { return c.model.decoder_blocks; });
    num("decoder.heads", [](Config& c) -> auto& { return c.model.decoder_heads; });
    num("decoder.mlp_ratio", [](Config& c) -> auto& { return c.model.mlp_ratio; });
    flag("fusion.softmax", [](Config& c) -> auto& { return c.model.fusion_softmax; });
    num("train.lr", [](Config& c) -> auto& { return c.train.lr; });
    num("train.batch_size", [](Config& c) -> auto& { return c.train.batch_size; });
    num("train.epochs", [](Config& c) -> auto& { return c.train.epochs; });
    num("train.seed", [](Config& c) -> auto& { return c.train.seed; });
    num("train.beta1", [](Config& c) -> auto& { return c.train.beta1; });
    num("train.beta2", [](Config& c) -> auto& { return c.train.beta2; });
    num("train.adam_eps", [](Config& c) -> auto& { return c.train.adam_eps; });
    num("train.grad_clip", [](Config& c) -> auto& { return c.train.grad_clip; });
    num("eval.beta_sq", [](Config& c) -> auto& { return c.eval.beta_sq; });
    num("eval.threshold", [](Config& c) -> auto& { return c.eval.threshold; });
    flag("eval.per_image_ap", [](Config& c) -> auto& { return c.eval.per_image_ap; });
    num("data.noise_level", [](Config& c) -> auto& { return c.data.noise_level; });
    num("data.min_size", [](Config& c) -> auto& { return c.data.min_size; });
    num("data.max_size", [](Config& c) -> auto& { return c.data.max_size; });
    return r;
  }();
  return reg;
}

inline const Field& lookup(const std::string& key) {
  for (const auto& [k, f] : registry())
    if (k == key) return f;
  throw ContractError("unknown config key: " + key);
}

}  // namespace detail

inline void Config::set(const std::string& key, const std::string& value) { detail::lookup(key).set(*this, value); }
inline std::string Config::get(const std::string& key) const { return detail::lookup(key).get(*this); }
inline const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> ks = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : detail::registry()) out.push_back(k);
    return out;
  }();
  return ks;
}

}  // namespace avsam
