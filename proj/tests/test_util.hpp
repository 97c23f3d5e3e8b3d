#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "avsam/autograd.hpp"
#include "avsam/tensor.hpp"

namespace testutil {

using avsam::Graph;
using avsam::Tensor;
using avsam::Var;

inline Tensor random_tensor(avsam::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 eng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * (static_cast<double>(eng() >> 11) * 0x1.0p-53);
  return t;
}

using OpFn = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Largest relative error between the analytic gradient of
/// sum(weights * op(inputs)) and a central difference, over every input
/// element.
inline double op_grad_error(const std::vector<Tensor>& inputs, const OpFn& op, double h = 1e-6, double floor = 1e-7) {
  auto forward = [&](const std::vector<Tensor>& xs, const Tensor* weights, Graph& g, std::vector<Var>& vars) {
    vars.clear();
    for (const auto& x : xs) vars.push_back(g.leaf(x));
    Var out = op(g, vars);
    if (weights == nullptr) return out;
    Var w = g.constant(*weights);
    Var flat = avsam::ops::reshape(out, {1, g.value(out).numel()});
    return avsam::ops::matmul(flat, avsam::ops::reshape(w, {weights->numel(), 1}));
  };
  Tensor weights;
  {
    Graph g;
    std::vector<Var> vars;
    const Var out = forward(inputs, nullptr, g, vars);
    weights = random_tensor(g.value(out).shape, 99);
  }
  auto loss_at = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Var> vars;
    return g.value(forward(xs, &weights, g, vars))[0];
  };
  Graph g;
  std::vector<Var> vars;
  const Var loss = avsam::ops::reshape(forward(inputs, &weights, g, vars), {1});
  g.backward(loss);
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.grad(vars[k]);
    for (std::size_t i = 0; i < probe[k].numel(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const double up = loss_at(probe);
      probe[k][i] = orig - h;
      const double down = loss_at(probe);
      probe[k][i] = orig;
      const double num = (up - down) / (2.0 * h);
      const double a = analytic[i];
      worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
    }
  }
  return worst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("avsam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
