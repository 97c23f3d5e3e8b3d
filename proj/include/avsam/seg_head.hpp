#pragma once

// Prompt encoder and two-way transformer mask decoder at configurable scale,
// plus the per-pixel BCE objective.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "avsam/autograd.hpp"
#include "avsam/config.hpp"
#include "avsam/params.hpp"

namespace avsam {

struct PromptPoint {
  double x = 0.0, y = 0.0;  // pixels, in [0, image_size]
  bool foreground = true;
};

struct PromptBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

struct PromptSet {
  std::vector<PromptPoint> points;
  std::vector<PromptBox> boxes;
  bool empty() const { return points.empty() && boxes.empty(); }
};

/// Per-pixel pre-sigmoid mask prediction (H, W).
struct MaskLogits {
  Tensor values;
};

/// Binary (H, W) mask with entries in {0, 1}.
struct GroundTruthMask {
  Tensor values;
};

namespace seg_head {

/// Rows of prompt_encoder.point_embed.
enum PointKind : std::size_t { kForeground = 0, kBackground = 1, kBoxTopLeft = 2, kBoxBottomRight = 3 };

/// Sinusoidal encoding of normalised coordinates (u, v) in [0, 1] into D
/// values laid out as [sin(2 pi f_k u)], [cos(2 pi f_k u)], [sin(2 pi f_k v)],
/// [cos(2 pi f_k v)] with f_k = k + 1, k < D / 4.
inline std::vector<double> positional_encoding(double u, double v, std::size_t D) {
  const std::size_t nf = D / 4;
  std::vector<double> pe(D, 0.0);
  for (std::size_t k = 0; k < nf; ++k) {
    const double f = 2.0 * std::numbers::pi * static_cast<double>(k + 1);
    pe[k] = std::sin(f * u);
    pe[nf + k] = std::cos(f * u);
    pe[2 * nf + k] = std::sin(f * v);
    pe[3 * nf + k] = std::cos(f * v);
  }
  return pe;
}

/// Positional encodings of the pixel centres of an H x W grid, (H*W, D).
inline Tensor grid_encoding(std::size_t H, std::size_t W, std::size_t D) {
  Tensor out({H * W, D});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const auto pe = positional_encoding((static_cast<double>(j) + 0.5) / static_cast<double>(W),
                                          (static_cast<double>(i) + 0.5) / static_cast<double>(H), D);
      std::copy(pe.begin(), pe.end(), out.data.begin() + static_cast<std::ptrdiff_t>((i * W + j) * D));
    }
  return out;
}

inline std::size_t upsample_channels(const ModelConfig& m) { return std::max<std::size_t>(1, m.D / 4); }

inline void init_prompt_encoder(ParamStore& store, InitRng& rng, const ModelConfig& m) {
  store.add("prompt_encoder.point_embed", rng.fan_in_uniform({4, m.D}, 1));
  store.add("prompt_encoder.no_prompt", rng.fan_in_uniform({1, m.D}, 1));
  store.add("prompt_encoder.no_mask", rng.fan_in_uniform({m.D}, 1));
}

inline void add_attention(ParamStore& store, InitRng& rng, const std::string& prefix, std::size_t D) {
  for (const char* n : {".q", ".k", ".v", ".out"}) nn::add_linear(store, rng, prefix + n, D, D);
}

inline void init_mask_decoder(ParamStore& store, InitRng& rng, const ModelConfig& m) {
  const std::size_t D = m.D, hidden = m.mlp_ratio * m.D, Du = upsample_channels(m);
  store.add("mask_decoder.mask_token", rng.fan_in_uniform({1, D}, 1));
  for (std::size_t b = 0; b < m.decoder_blocks; ++b) {
    const std::string base = "mask_decoder.block" + std::to_string(b);
    add_attention(store, rng, base + ".self_attn", D);
    nn::add_layer_norm(store, base + ".norm1", D);
    add_attention(store, rng, base + ".token_to_image", D);
    nn::add_layer_norm(store, base + ".norm2", D);
    nn::add_linear(store, rng, base + ".mlp.fc1", D, hidden);
    nn::add_linear(store, rng, base + ".mlp.fc2", hidden, D);
    nn::add_layer_norm(store, base + ".norm3", D);
    add_attention(store, rng, base + ".image_to_token", D);
    nn::add_layer_norm(store, base + ".norm4", D);
  }
  for (std::size_t u = 0; u + 1 < m.S; ++u) {
    const bool last = u + 2 == m.S;
    const std::size_t out_c = last ? Du : D;
    const std::string base = "mask_decoder.up" + std::to_string(u + 1);
    store.add(base + ".weight", rng.fan_in_uniform({D, out_c, 2, 2}, D * 4));
    store.add(base + ".bias", rng.fan_in_uniform({out_c}, D * 4));
    if (last) {
      nn::add_linear(store, rng, base + ".skip", D, Du);
    } else {
      nn::add_layer_norm(store, base + ".norm", D);
    }
  }
  if (m.S == 1) nn::add_linear(store, rng, "mask_decoder.pixel_proj", D, Du);
  nn::add_linear(store, rng, "mask_decoder.hyper.fc1", D, D);
  nn::add_linear(store, rng, "mask_decoder.hyper.fc2", D, Du);
}

struct PromptEmbeddings {
  Var sparse;  // (K, D)
  Var dense;   // (D, H^S, W^S)
};

inline void check_prompts(const PromptSet& ps, double image_size) {
  auto in = [&](double c) { return std::isfinite(c) && c >= 0.0 && c <= image_size; };
  for (const auto& pt : ps.points)
    require(in(pt.x) && in(pt.y), "prompt point (" + std::to_string(pt.x) + "," + std::to_string(pt.y) +
                                      ") outside image bounds [0," + std::to_string(image_size) + "]");
  for (const auto& b : ps.boxes)
    require(in(b.x0) && in(b.y0) && in(b.x1) && in(b.y1) && b.x0 <= b.x1 && b.y0 <= b.y1,
            "prompt box outside image bounds or inverted");
}

/// Each point becomes PE(x/W, y/H) + point_embed[fg|bg]; each box contributes
/// its two corners. An empty set yields the learned no-prompt token.
inline PromptEmbeddings encode_prompts(Binder& p, const PromptSet& ps, const ModelConfig& m) {
  const double size = static_cast<double>(m.image_size);
  check_prompts(ps, size);
  Graph& g = p.graph();
  const std::size_t D = m.D;
  const std::size_t coarse = m.image_size >> (m.S + 1);
  PromptEmbeddings out;
  out.dense = ops::broadcast_spatial(p("prompt_encoder.no_mask"), coarse, coarse);
  if (ps.empty()) {
    out.sparse = p("prompt_encoder.no_prompt");
    return out;
  }
  std::vector<std::pair<std::vector<double>, std::size_t>> tokens;
  for (const auto& pt : ps.points)
    tokens.emplace_back(positional_encoding(pt.x / size, pt.y / size, D), pt.foreground ? kForeground : kBackground);
  for (const auto& b : ps.boxes) {
    tokens.emplace_back(positional_encoding(b.x0 / size, b.y0 / size, D), kBoxTopLeft);
    tokens.emplace_back(positional_encoding(b.x1 / size, b.y1 / size, D), kBoxBottomRight);
  }
  const std::size_t K = tokens.size();
  Tensor pe({K, D}), select({K, 4}, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    std::copy(tokens[k].first.begin(), tokens[k].first.end(), pe.data.begin() + static_cast<std::ptrdiff_t>(k * D));
    select.at(k, tokens[k].second) = 1.0;
  }
  out.sparse = ops::add(g.constant(std::move(pe)), ops::matmul(g.constant(std::move(select)), p("prompt_encoder.point_embed")));
  return out;
}

inline Var attention_block(Binder& p, const std::string& prefix, Var q, Var k, Var v, std::size_t heads) {
  Var Q = nn::linear_rows(p, prefix + ".q", q);
  Var K = nn::linear_rows(p, prefix + ".k", k);
  Var V = nn::linear_rows(p, prefix + ".v", v);
  return nn::linear_rows(p, prefix + ".out", ops::attention(Q, K, V, heads));
}

/// Channel-wise layer norm of a (C, H, W) map.
inline Var layer_norm_2d(Binder& p, const std::string& prefix, Var x) {
  const Shape s = x.graph->value(x).shape;
  Var rows = ops::transpose(ops::reshape(x, {s[0], s[1] * s[2]}));
  Var normed = nn::layer_norm(p, prefix, rows);
  return ops::reshape(ops::transpose(normed), s);
}

/// Mask logits (H, W) from fused stages (finest first) and prompt embeddings.
/// The coarsest stage plus the dense prompt is the image memory; finer stages
/// join as additive skips while the pixel embedding is upsampled.
inline Var decode_mask(Binder& p, const std::vector<Var>& fused, const PromptEmbeddings& pe, const ModelConfig& m) {
  Graph& g = p.graph();
  require(fused.size() == m.S, "decode_mask: expected " + std::to_string(m.S) + " fused stages");
  const std::size_t D = m.D;
  for (Var z : fused) require(g.value(z).rank() == 3 && g.value(z).dim(0) == D, "decode_mask: channel dimension mismatch");
  const Shape cs = g.value(fused.back()).shape;
  require(g.value(pe.dense).shape == cs, "decode_mask: dense prompt shape " + shape_str(g.value(pe.dense).shape) +
                                             " does not match coarsest stage " + shape_str(cs));
  require(g.value(pe.sparse).rank() == 2 && g.value(pe.sparse).dim(1) == D, "decode_mask: sparse prompt width mismatch");
  const std::size_t Hc = cs[1], Wc = cs[2], Nc = Hc * Wc;

  Var src = ops::transpose(ops::reshape(ops::add(fused.back(), pe.dense), {D, Nc}));  // (Nc, D)
  Var img_pe = g.constant(grid_encoding(Hc, Wc, D));
  Var tokens = ops::concat_rows(p("mask_decoder.mask_token"), pe.sparse);
  Var token_pe = tokens;
  const std::size_t heads = m.decoder_heads;

  for (std::size_t b = 0; b < m.decoder_blocks; ++b) {
    const std::string base = "mask_decoder.block" + std::to_string(b);
    Var q = ops::add(tokens, token_pe);
    tokens = nn::layer_norm(p, base + ".norm1", ops::add(tokens, attention_block(p, base + ".self_attn", q, q, tokens, heads)));
    q = ops::add(tokens, token_pe);
    Var keys = ops::add(src, img_pe);
    tokens = nn::layer_norm(p, base + ".norm2",
                            ops::add(tokens, attention_block(p, base + ".token_to_image", q, keys, src, heads)));
    Var hidden = ops::gelu(nn::linear_rows(p, base + ".mlp.fc1", tokens));
    tokens = nn::layer_norm(p, base + ".norm3", ops::add(tokens, nn::linear_rows(p, base + ".mlp.fc2", hidden)));
    q = ops::add(tokens, token_pe);
    keys = ops::add(src, img_pe);
    src = nn::layer_norm(p, base + ".norm4", ops::add(src, attention_block(p, base + ".image_to_token", keys, q, tokens, heads)));
  }

  Var mask_token = ops::slice_rows(tokens, 0, 1);
  Var pix = ops::reshape(ops::transpose(src), {D, Hc, Wc});
  if (m.S == 1) pix = ops::gelu(nn::conv1x1(p, "mask_decoder.pixel_proj", pix));
  for (std::size_t u = 0; u + 1 < m.S; ++u) {
    const bool last = u + 2 == m.S;
    const std::string base = "mask_decoder.up" + std::to_string(u + 1);
    Var skip = fused[m.S - 2 - u];
    Var up = ops::conv_transpose2x2(pix, p(base + ".weight"), p(base + ".bias"));
    if (last) {
      pix = ops::gelu(ops::add(up, nn::conv1x1(p, base + ".skip", skip)));
    } else {
      pix = ops::gelu(layer_norm_2d(p, base + ".norm", ops::add(up, skip)));
    }
  }
  Var h = nn::linear_rows(p, "mask_decoder.hyper.fc2", ops::gelu(nn::linear_rows(p, "mask_decoder.hyper.fc1", mask_token)));
  const Shape ps = g.value(pix).shape;
  Var low = ops::matmul(h, ops::reshape(pix, {ps[0], ps[1] * ps[2]}));  // (1, Hf*Wf)
  Var up = ops::bilinear_resize(ops::reshape(low, {1, ps[1], ps[2]}), m.image_size, m.image_size);
  return ops::reshape(up, {m.image_size, m.image_size});
}

inline constexpr double kProbClamp = 1e-7;

inline void check_binary(const Tensor& y) {
  for (double v : y.data) require(v == 0.0 || v == 1.0, "ground-truth mask must be binary {0,1}");
}

/// Mean per-pixel binary cross-entropy with probabilities clamped to
/// [1e-7, 1 - 1e-7]; the clamp also zeroes the gradient where it is active.
inline Var bce_loss(Var logits, const Tensor& target) {
  Graph& g = *logits.graph;
  const Tensor& M = g.value(logits);
  require(M.shape == target.shape, "bce_loss: shape mismatch " + shape_str(M.shape) + " vs " + shape_str(target.shape));
  check_binary(target);
  const std::size_t n = M.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-M[i])), kProbClamp, 1.0 - kProbClamp);
    total -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  const int im = logits.id;
  auto y = std::make_shared<Tensor>(target);
  return g.push(Tensor({1}, total / static_cast<double>(n)), g.requires_grad(logits), [=](Graph& gr, int self) {
    const double d = gr.grad(self)[0] / static_cast<double>(n);
    const Tensor& Mv = gr.value(im);
    Tensor& dm = gr.grad(im);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-Mv[i]));
      if (s < kProbClamp || s > 1.0 - kProbClamp) continue;
      dm[i] += d * (s - (*y)[i]);
    }
  });
}

inline double bce_loss(const MaskLogits& m, const GroundTruthMask& y) {
  Graph g;
  return g.value(bce_loss(g.constant(m.values), y.values))[0];
}

}  // namespace seg_head
}  // namespace avsam
