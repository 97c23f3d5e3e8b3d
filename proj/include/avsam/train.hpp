#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "avsam/checkpoint.hpp"
#include "avsam/config.hpp"
#include "avsam/error.hpp"
#include "avsam/model.hpp"
#include "avsam/seg_head.hpp"

namespace avsam {

/// Parameters plus optimizer state. Moments exist for every parameter; the
/// ones belonging to frozen modules stay zero.
struct TrainState {
  Model model;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
  std::uint64_t step = 0;

  static TrainState fresh(const Model& m) {
    TrainState s{m, {}, {}, 0};
    for (const auto& [n, t] : m.params.all()) {
      s.adam_m.emplace(n, Tensor(t.shape, 0.0));
      s.adam_v.emplace(n, Tensor(t.shape, 0.0));
    }
    return s;
  }

  static TrainState from_checkpoint(const Checkpoint& c, const Config& cfg) {
    TrainState s = fresh(restore_model(c, cfg));
    for (auto& [n, t] : s.adam_m)
      if (c.adam_m.contains(n)) t = c.adam_m.at(n);
    for (auto& [n, t] : s.adam_v)
      if (c.adam_v.contains(n)) t = c.adam_v.at(n);
    s.step = c.step;
    return s;
  }

  Checkpoint checkpoint() const {
    Checkpoint c = make_checkpoint(model);
    c.adam_m = adam_m;
    c.adam_v = adam_v;
    c.step = step;
    return c;
  }
};

/// One bias-corrected Adam update; `t` is the 1-based step count.
inline void adam_update(Tensor& param, Tensor& m, Tensor& v, const Tensor& grad, std::uint64_t t, const TrainConfig& cfg) {
  require(param.shape == grad.shape && m.shape == grad.shape && v.shape == grad.shape, "adam_update: shape mismatch");
  require(t >= 1, "adam_update: step count is 1-based");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    param[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
  }
}

inline std::function<bool(const std::string&)> trainable_filter(const FreezePlan& plan) {
  return [plan](const std::string& name) { return plan.trainable(ParamStore::module_of(name)); };
}

/// Forward + mean BCE + backward over a batch (gradients averaged over the
/// batch, summed in batch order), then one Adam step on trainable modules.
/// Returns the mean loss.
inline double train_step(TrainState& state, const std::vector<const Example*>& batch, const FreezePlan& plan,
                         const TrainConfig& tcfg) {
  require(!batch.empty(), "train_step: empty batch");
  const auto filter = trainable_filter(plan);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::map<std::string, Tensor> grads;
  double total = 0.0;
  for (const Example* ex : batch) {
    Graph g;
    Binder p(g, state.model.params, filter);
    const ForwardResult r = state.model.forward(p, ex->spectrogram, ex->image);
    require(g.value(r.logits).shape == ex->mask.shape, "train_step: mask shape " + shape_str(ex->mask.shape) +
                                                           " does not match prediction " + shape_str(g.value(r.logits).shape));
    const Var loss = seg_head::bce_loss(r.logits, ex->mask);
    const double lv = g.value(loss)[0];
    ensure(std::isfinite(lv), "non-finite loss " + std::to_string(lv) + " at step " + std::to_string(state.step + 1) +
                                  " on sample '" + ex->id + "'");
    total += lv;
    if (!g.requires_grad(loss)) continue;
    g.backward(loss, inv_b);
    for (const auto& [name, id] : g.params()) {
      if (!g.has_grad(id)) continue;
      auto it = grads.find(name);
      if (it == grads.end()) grads.emplace(name, g.grad(id));
      else
        for (std::size_t i = 0; i < it->second.numel(); ++i) it->second[i] += g.grad(id)[i];
    }
  }
  if (tcfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [n, gr] : grads)
      for (double v : gr.data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > tcfg.grad_clip)
      for (auto& [n, gr] : grads)
        for (double& v : gr.data) v *= tcfg.grad_clip / norm;
  }
  ++state.step;
  for (auto& [name, t] : state.model.params.all()) {
    if (!filter(name)) continue;
    auto it = grads.find(name);
    const Tensor zero(t.shape, 0.0);
    adam_update(t, state.adam_m.at(name), state.adam_v.at(name), it == grads.end() ? zero : it->second, state.step, tcfg);
  }
  for (const auto& [name, t] : state.model.params.all())
    ensure(t.all_finite(), "parameter " + name + " became non-finite at step " + std::to_string(state.step));
  return total * inv_b;
}

struct LossRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
};

inline std::string loss_csv(const std::vector<LossRecord>& log) {
  std::string out = "epoch,step,loss\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%llu,%.17g\n", r.epoch, static_cast<unsigned long long>(r.step), r.loss);
    out += buf;
  }
  return out;
}

/// Fisher-Yates with an explicit draw so the order does not depend on the
/// standard library's distribution implementations.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 eng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[eng() % i]);
  return order;
}

struct TrainResult {
  TrainState state;
  std::vector<LossRecord> log;
  Checkpoint checkpoint() const { return state.checkpoint(); }
};

using ProgressFn = std::function<void(const LossRecord&)>;

inline TrainResult run_training(const std::vector<Example>& examples, const Config& cfg, const FreezePlan& plan,
                                const ProgressFn& progress = nullptr) {
  require(!examples.empty(), "run_training: no training examples");
  cfg.validate();
  TrainResult res{TrainState::fresh(Model::init(cfg)), {}};
  const std::size_t bs = cfg.train.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), cfg.train.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) batch.push_back(&examples[order[i]]);
      const double loss = train_step(res.state, batch, plan, cfg.train);
      res.log.push_back({epoch, res.state.step, loss});
      if (progress) progress(res.log.back());
    }
  }
  return res;
}

// --- gradient verification --------------------------------------------------

struct GradcheckOptions {
  bool zero_mu = false;
  double step = 1e-4;
  double floor = 1e-6;
  /// Test hook: multiply the analytic gradient of this parameter by
  /// `corrupt_scale` before comparing.
  std::string corrupt_param;
  double corrupt_scale = 2.0;
  std::uint64_t seed = 0;
};

struct ParamGradError {
  std::string name;
  std::size_t count = 0;
  double max_rel = 0.0;
  double max_abs = 0.0;
};

struct GradcheckReport {
  std::vector<ParamGradError> params;
  double max_rel = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel < tolerance; }

  std::string table() const {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-48s %8s %12s %12s\n", "parameter", "count", "max_rel", "max_abs");
    out += buf;
    for (const auto& p : params) {
      std::snprintf(buf, sizeof buf, "%-48s %8zu %12.3e %12.3e\n", p.name.c_str(), p.count, p.max_rel, p.max_abs);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.0e): %s\n", max_rel, tolerance,
                  passed() ? "PASS" : "FAIL");
    out += buf;
    return out;
  }
};

/// Finite-difference check of d(BCE)/d(param) for every element of every
/// parameter, using the fourth-order central stencil
///   (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.
/// The loss is a pixel mean, so many gradients sit near 1e-6; the two-point
/// stencil's O(h^2) error is too close to that. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradcheckReport gradcheck(Config cfg, const GradcheckOptions& opt = {}) {
  cfg.model.zero_init_mu = opt.zero_mu;
  Model model = Model::init(cfg);
  const std::size_t n = cfg.model.image_size;
  InitRng rng(opt.seed ^ 0x6752AD1ULL);
  Tensor spec({cfg.audio.num_bins(), cfg.audio.num_frames()});
  for (double& v : spec.data) v = rng.uniform(-6.0, 2.0);
  Tensor image({3, n, n});
  for (double& v : image.data) v = rng.uniform01();
  Tensor mask({n, n});
  for (double& v : mask.data) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
  ForwardOptions fo;
  const double sz = static_cast<double>(n);
  fo.prompts.points = {{0.3 * sz, 0.6 * sz, true}, {0.8 * sz, 0.2 * sz, false}};
  fo.prompts.boxes = {{0.1 * sz, 0.2 * sz, 0.7 * sz, 0.9 * sz}};

  auto loss_of = [&](const ParamStore& store) {
    Graph g;
    Binder p(g, store);
    const Var logits = model.forward(p, spec, image, fo).logits;
    return g.value(seg_head::bce_loss(logits, mask))[0];
  };

  Graph g;
  Binder p(g, model.params, [](const std::string&) { return true; });
  const Var loss = seg_head::bce_loss(model.forward(p, spec, image, fo).logits, mask);
  g.backward(loss);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, id] : g.params()) analytic.emplace(name, g.grad(id));

  GradcheckReport rep;
  ParamStore probe = model.params;
  for (auto& [name, t] : probe.all()) {
    ParamGradError e{name, t.numel(), 0.0, 0.0};
    Tensor a = analytic.contains(name) ? analytic.at(name) : Tensor(t.shape, 0.0);
    if (name == opt.corrupt_param)
      for (double& v : a.data) v *= opt.corrupt_scale;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      auto at = [&](double offset) {
        t[i] = orig + offset;
        return loss_of(probe);
      };
      const double h = opt.step;
      const double num = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      t[i] = orig;
      const double abs_err = std::abs(a[i] - num);
      const double rel = abs_err / std::max({std::abs(a[i]), std::abs(num), opt.floor});
      e.max_abs = std::max(e.max_abs, abs_err);
      e.max_rel = std::max(e.max_rel, rel);
    }
    rep.max_rel = std::max(rep.max_rel, e.max_rel);
    rep.params.push_back(e);
  }
  return rep;
}

}  // namespace avsam
