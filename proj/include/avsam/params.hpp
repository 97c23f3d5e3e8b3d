#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "avsam/autograd.hpp"
#include "avsam/error.hpp"
#include "avsam/tensor.hpp"

namespace avsam {

/// Named parameter arrays keyed by canonical `module.path` names. Iteration
/// order is lexicographic, which fixes optimizer and checkpoint ordering.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t) {
    require(!params_.contains(name), "duplicate parameter: " + name);
    params_.emplace(name, std::move(t));
  }
  bool contains(const std::string& name) const { return params_.contains(name); }
  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }

  /// Element count of parameters whose module prefix equals `module` (or all
  /// parameters when `module` is empty).
  std::size_t count(const std::string& module = "") const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_)
      if (module.empty() || module_of(name) == module) n += t.numel();
    return n;
  }

  static std::string module_of(const std::string& name) { return name.substr(0, name.find('.')); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

/// Seeded source of initial weights. Draws are portable across standard
/// libraries (no std distributions involved).
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : eng_(seed) {}
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  Tensor fan_in_uniform(Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = uniform(-bound, bound);
    return t;
  }

 private:
  std::mt19937_64 eng_;
};

/// Binds ParamStore entries into a Graph on first use. Parameters for which
/// `trainable` returns false enter as constants.
class Binder {
 public:
  Binder(Graph& g, const ParamStore& store, std::function<bool(const std::string&)> trainable = nullptr)
      : graph_(g), store_(store), trainable_(std::move(trainable)) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const bool train = trainable_ ? trainable_(name) : false;
    Var v = train ? graph_.param(name, store_.at(name)) : graph_.constant(store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  Graph& graph() { return graph_; }
  const ParamStore& store() const { return store_; }

 private:
  Graph& graph_;
  const ParamStore& store_;
  std::function<bool(const std::string&)> trainable_;
  std::map<std::string, Var> bound_;
};

namespace nn {

/// x (in, N) channels-first -> W x + b, (out, N).
inline Var linear_cf(Binder& p, const std::string& prefix, Var x) {
  return ops::add_bias(ops::matmul(p(prefix + ".weight"), x), p(prefix + ".bias"), 0);
}

/// x (N, in) token rows -> x W^T + b, (N, out).
inline Var linear_rows(Binder& p, const std::string& prefix, Var x) {
  return ops::add_bias(ops::matmul(x, p(prefix + ".weight"), false, true), p(prefix + ".bias"), 1);
}

inline Var conv(Binder& p, const std::string& prefix, Var x, std::size_t stride, std::size_t pad) {
  return ops::conv2d(x, p(prefix + ".weight"), p(prefix + ".bias"), stride, pad);
}

/// 1x1 convolution on a (C, H, W) map.
inline Var conv1x1(Binder& p, const std::string& prefix, Var x) {
  const Shape s = x.graph->value(x).shape;
  Var flat = ops::reshape(x, {s[0], s[1] * s[2]});
  Var y = linear_cf(p, prefix, flat);
  return ops::reshape(y, {y.graph->value(y).dim(0), s[1], s[2]});
}

inline void add_linear(ParamStore& store, InitRng& rng, const std::string& prefix, std::size_t in, std::size_t out) {
  store.add(prefix + ".weight", rng.fan_in_uniform({out, in}, in));
  store.add(prefix + ".bias", rng.fan_in_uniform({out}, in));
}

inline void add_conv(ParamStore& store, InitRng& rng, const std::string& prefix, std::size_t in, std::size_t out,
                     std::size_t k) {
  store.add(prefix + ".weight", rng.fan_in_uniform({out, in, k, k}, in * k * k));
  store.add(prefix + ".bias", rng.fan_in_uniform({out}, in * k * k));
}

inline void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gamma", Tensor({dim}, 1.0));
  store.add(prefix + ".beta", Tensor({dim}, 0.0));
}

inline Var layer_norm(Binder& p, const std::string& prefix, Var x) {
  return ops::layer_norm_rows(x, p(prefix + ".gamma"), p(prefix + ".beta"));
}

}  // namespace nn
}  // namespace avsam
