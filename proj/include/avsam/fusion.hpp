#pragma once

// Pixel-wise audio-visual fusion. For a visual stage v (D, H, W) and global
// audio embedding a (D), with N = H * W and every 1x1 projection acting on
// the channel axis:
//
//   a_hat = a repeated at all N positions
//   S     = theta(v)^T phi(a_hat) / N              (N x N, rows index pixels)
//   z     = v + mu( S omega(v)^T )                 (reshaped back to (D,H,W))
//
// Since a_hat is spatially constant, phi(a_hat) has identical columns and
// S[p, q] depends on p only.

#include <string>
#include <vector>

#include "avsam/autograd.hpp"
#include "avsam/backbone.hpp"
#include "avsam/params.hpp"

namespace avsam {

struct LinearParams {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
};

/// The four 1x1 projections of one stage.
struct FusionStageParams {
  LinearParams theta, phi, omega, mu;
};

struct FusedPyramid {
  std::vector<Tensor> stages;
};

namespace fusion {

inline std::string stage_prefix(std::size_t s) { return "fusion.s" + std::to_string(s + 1); }
inline constexpr const char* kProjections[] = {"theta", "phi", "omega", "mu"};

inline void init(ParamStore& store, InitRng& rng, const ModelConfig& m) {
  for (std::size_t s = 0; s < m.S; ++s)
    for (const char* proj : kProjections) {
      const std::string prefix = stage_prefix(s) + "." + proj;
      nn::add_linear(store, rng, prefix, m.D, m.D);
      if (m.zero_init_mu && std::string(proj) == "mu") {
        store.at(prefix + ".weight") = Tensor({m.D, m.D}, 0.0);
        store.at(prefix + ".bias") = Tensor({m.D}, 0.0);
      }
    }
}

struct StageOutput {
  Var fused;       // (D, H, W)
  Var similarity;  // (N, N)
};

/// Graph form; `prefix` names the stage's parameters in `p`.
inline StageOutput fuse_stage(Binder& p, const std::string& prefix, Var v, Var a, bool softmax) {
  Graph& g = p.graph();
  const Shape vs = g.value(v).shape;
  require(vs.size() == 3, "fuse_stage: visual features must be (D,H,W)");
  const std::size_t D = vs[0], H = vs[1], W = vs[2], N = H * W;
  require(g.value(a).numel() == D, "fuse_stage: audio dim " + std::to_string(g.value(a).numel()) +
                                       " does not match visual channels " + std::to_string(D));
  Var flat_v = ops::reshape(v, {D, N});
  Var a_hat = ops::reshape(ops::broadcast_spatial(a, H, W), {D, N});
  Var th = nn::linear_cf(p, prefix + ".theta", flat_v);
  Var ph = nn::linear_cf(p, prefix + ".phi", a_hat);
  Var om = nn::linear_cf(p, prefix + ".omega", flat_v);
  Var scores = ops::matmul(th, ph, true, false);
  Var sim = softmax ? ops::softmax_rows(scores) : ops::scale(scores, 1.0 / static_cast<double>(N));
  Var mixed = ops::matmul(om, sim, false, true);  // (D, N): column p = sum_q S[p,q] omega(v)_q
  Var update = nn::linear_cf(p, prefix + ".mu", mixed);
  Var z = ops::add(flat_v, update);
  return {ops::reshape(z, {D, H, W}), sim};
}

inline std::vector<Var> fuse_pyramid(Binder& p, const std::vector<Var>& stages, Var a, const ModelConfig& m) {
  require(stages.size() == m.S, "fuse_pyramid: pyramid has " + std::to_string(stages.size()) + " stages, params have " +
                                    std::to_string(m.S));
  std::vector<Var> out;
  for (std::size_t s = 0; s < stages.size(); ++s)
    out.push_back(fuse_stage(p, stage_prefix(s), stages[s], a, m.fusion_softmax).fused);
  return out;
}

inline FusionStageParams stage_params(const ParamStore& store, std::size_t s) {
  auto lin = [&](const char* proj) {
    const std::string prefix = stage_prefix(s) + "." + proj;
    return LinearParams{store.at(prefix + ".weight"), store.at(prefix + ".bias")};
  };
  return {lin("theta"), lin("phi"), lin("omega"), lin("mu")};
}

namespace detail {
inline ParamStore as_store(const FusionStageParams& fp) {
  ParamStore st;
  const LinearParams* lp[] = {&fp.theta, &fp.phi, &fp.omega, &fp.mu};
  for (int i = 0; i < 4; ++i) {
    const std::string prefix = std::string("f.") + kProjections[i];
    st.add(prefix + ".weight", lp[i]->weight);
    st.add(prefix + ".bias", lp[i]->bias);
  }
  return st;
}
}  // namespace detail

/// Pure tensor form of one fusion stage.
inline Tensor fuse_stage(const Tensor& v, const Tensor& a, const FusionStageParams& fp, bool softmax = false) {
  const ParamStore st = detail::as_store(fp);
  Graph g;
  Binder p(g, st);
  return g.value(fuse_stage(p, "f", g.constant(v), g.constant(a), softmax).fused);
}

/// The (N x N) similarity matrix a stage builds for (v, a).
inline Tensor similarity(const Tensor& v, const Tensor& a, const FusionStageParams& fp, bool softmax = false) {
  const ParamStore st = detail::as_store(fp);
  Graph g;
  Binder p(g, st);
  return g.value(fuse_stage(p, "f", g.constant(v), g.constant(a), softmax).similarity);
}

inline FusedPyramid fuse_pyramid(const FeaturePyramid& pyr, const Tensor& a, const std::vector<FusionStageParams>& params,
                                 bool softmax = false) {
  require(pyr.stages.size() == params.size(), "fuse_pyramid: pyramid has " + std::to_string(pyr.stages.size()) +
                                                  " stages, params have " + std::to_string(params.size()));
  FusedPyramid out;
  for (std::size_t s = 0; s < params.size(); ++s) out.stages.push_back(fuse_stage(pyr.stages[s], a, params[s], softmax));
  return out;
}

}  // namespace fusion
}  // namespace avsam
