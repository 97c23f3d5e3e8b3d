#pragma once

// Dual-stream encoders. The audio stream maps a log spectrogram to one global
// embedding a (D); the visual stream maps an RGB image to an S-stage feature
// pyramid, stage s at image_size / 2^(s+1), all with D channels.

#include <string>
#include <vector>

#include "avsam/autograd.hpp"
#include "avsam/config.hpp"
#include "avsam/params.hpp"

namespace avsam {

/// (3, H, W) RGB image with values in [0, 1].
struct ImageTensor {
  Tensor values;
};

/// Stages ordered finest first; the coarsest stage is last.
struct FeaturePyramid {
  std::vector<Tensor> stages;
};

namespace backbone {

inline std::string stage_name(std::size_t s) { return "stage" + std::to_string(s + 1); }

inline void init_audio_encoder(ParamStore& store, InitRng& rng, const ModelConfig& m) {
  const auto& ch = m.audio_channels;
  nn::add_conv(store, rng, "audio_encoder.conv1", 2, ch[0], 4);
  nn::add_conv(store, rng, "audio_encoder.conv2", ch[0], ch[1], 3);
  nn::add_conv(store, rng, "audio_encoder.conv3", ch[1], ch[2], 3);
  nn::add_conv(store, rng, "audio_encoder.conv4", ch[2], ch[3], 3);
  nn::add_linear(store, rng, "audio_encoder.proj", ch[3], m.D);
}

inline void init_image_encoder(ParamStore& store, InitRng& rng, const ModelConfig& m) {
  nn::add_conv(store, rng, "image_encoder.stem", 3, m.stem_channels, 3);
  for (std::size_t s = 0; s < m.S; ++s) {
    const std::string base = "image_encoder." + stage_name(s);
    nn::add_conv(store, rng, base + ".down", s == 0 ? m.stem_channels : m.D, m.D, 3);
    if (s > 0) nn::add_conv(store, rng, base + ".conv", m.D, m.D, 3);
    nn::add_linear(store, rng, base + ".proj", m.D, m.D);
  }
}

/// Per-spectrogram standardisation plus a fixed frequency-coordinate channel:
/// (F, T) -> (2, F, T). The coordinate channel gives the translation-
/// equivariant conv stack access to absolute frequency.
inline Tensor audio_input(const Tensor& spec) {
  require(spec.rank() == 2, "audio input must be (F, T)");
  const std::size_t F = spec.dim(0), T = spec.dim(1), n = spec.numel();
  double mean = 0.0;
  for (double v : spec.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : spec.data) var += (v - mean) * (v - mean);
  const double inv = 1.0 / (std::sqrt(var / static_cast<double>(n)) + 1e-5);
  Tensor out({2, F, T});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      out.at(0, f, t) = (spec.at(f, t) - mean) * inv;
      out.at(1, f, t) = F > 1 ? 2.0 * static_cast<double>(f) / static_cast<double>(F - 1) - 1.0 : 0.0;
    }
  return out;
}

/// Strided conv stack + global average pool + linear projection -> (D).
inline Var encode_audio(Binder& p, const Tensor& spec, const Config& cfg) {
  require_shape(spec, {cfg.audio.num_bins(), cfg.audio.num_frames()}, "encode_audio");
  Graph& g = p.graph();
  Var x = g.constant(audio_input(spec));
  x = ops::gelu(nn::conv(p, "audio_encoder.conv1", x, 4, 0));
  x = ops::gelu(nn::conv(p, "audio_encoder.conv2", x, 2, 1));
  x = ops::gelu(nn::conv(p, "audio_encoder.conv3", x, 2, 1));
  x = ops::gelu(nn::conv(p, "audio_encoder.conv4", x, 2, 1));
  Var pooled = ops::global_avg_pool(x);
  Var col = ops::reshape(pooled, {g.value(pooled).numel(), 1});
  Var a = nn::linear_cf(p, "audio_encoder.proj", col);
  return ops::reshape(a, {cfg.model.D});
}

inline std::vector<Var> encode_image(Binder& p, const Tensor& image, const Config& cfg) {
  const std::size_t n = cfg.model.image_size;
  require_shape(image, {3, n, n}, "encode_image");
  Graph& g = p.graph();
  Var x = ops::gelu(nn::conv(p, "image_encoder.stem", g.constant(image), 2, 1));
  std::vector<Var> stages;
  for (std::size_t s = 0; s < cfg.model.S; ++s) {
    const std::string base = "image_encoder." + stage_name(s);
    x = ops::gelu(nn::conv(p, base + ".down", x, 2, 1));
    if (s > 0) x = ops::gelu(nn::conv(p, base + ".conv", x, 1, 1));
    stages.push_back(nn::conv1x1(p, base + ".proj", x));
  }
  return stages;
}

/// Repeats `a` at each of the H x W positions: out[:, h, w] = a.
inline Tensor duplicate_audio(const Tensor& a, std::size_t H, std::size_t W) {
  require(H >= 1 && W >= 1, "duplicate_audio: H and W must be positive");
  Graph g;
  return g.value(ops::broadcast_spatial(g.constant(a), H, W));
}

}  // namespace backbone
}  // namespace avsam
