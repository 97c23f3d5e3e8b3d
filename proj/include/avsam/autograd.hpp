#pragma once

// Tape-based reverse-mode differentiation over dense double tensors. A Graph
// records every op of one forward pass; Graph::backward walks the tape in
// reverse and accumulates gradients into nodes that require them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avsam/error.hpp"
#include "avsam/kernels.hpp"
#include "avsam/tensor.hpp"

namespace avsam {

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }
  Var leaf(Tensor t) { return push(std::move(t), true, nullptr); }

  /// Parameter leaf; its gradient is retrievable by name after backward.
  Var param(std::string name, const Tensor& t, bool trainable = true) {
    Var v = push(t, trainable, nullptr);
    if (trainable) params_.emplace_back(std::move(name), v.id);
    return v;
  }

  Var push(Tensor value, bool requires_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first touch.
  Tensor& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape, 0.0);
    return n.grad;
  }
  Tensor& grad(Var v) { return grad(v.id); }
  bool has_grad(int id) const { return nodes_[id].grad.numel() == nodes_[id].value.numel() && nodes_[id].value.numel() > 0; }

  void backward(Var loss, double seed = 1.0) {
    require(value(loss).numel() == 1, "backward: loss must be a scalar");
    grad(loss)[0] += seed;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || !has_grad(i)) continue;
      n.backward(*this, i);
    }
  }

  const std::vector<std::pair<std::string, int>>& params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
};

namespace ops {

namespace detail {
inline Graph& graph_of(Var a) {
  ensure(a.valid(), "op applied to an invalid Var");
  return *a.graph;
}
inline bool any_grad(Graph& g, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.valid() && g.requires_grad(v)) return true;
  return false;
}
}  // namespace detail

/// op(A) * op(B) for rank-2 tensors.
inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  Graph& g = detail::graph_of(a);
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require(A.rank() == 2 && B.rank() == 2, "matmul: rank-2 operands required");
  const std::size_t M = trans_a ? A.dim(1) : A.dim(0);
  const std::size_t K = trans_a ? A.dim(0) : A.dim(1);
  const std::size_t Kb = trans_b ? B.dim(1) : B.dim(0);
  const std::size_t N = trans_b ? B.dim(0) : B.dim(1);
  require(K == Kb, "matmul: inner dimension mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape));
  Tensor C({M, N}, 0.0);
  kernels::gemm(trans_a, trans_b, M, N, K, A.data.data(), B.data.data(), C.data.data());
  const int ia = a.id, ib = b.id;
  return g.push(std::move(C), detail::any_grad(g, {a, b}), [=](Graph& gr, int self) {
    const double* dC = gr.grad(self).data.data();
    const double* Ad = gr.value(ia).data.data();
    const double* Bd = gr.value(ib).data.data();
    if (gr.requires_grad(ia)) {
      double* dA = gr.grad(ia).data.data();
      if (!trans_a) {
        kernels::gemm(false, !trans_b, M, K, N, dC, Bd, dA);
      } else {
        kernels::gemm(trans_b, true, K, M, N, Bd, dC, dA);
      }
    }
    if (gr.requires_grad(ib)) {
      double* dB = gr.grad(ib).data.data();
      if (!trans_b) {
        kernels::gemm(!trans_a, false, K, N, M, Ad, dC, dB);
      } else {
        kernels::gemm(true, trans_a, N, K, M, dC, Ad, dB);
      }
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a);
  require(g.value(a).shape == g.value(b).shape, "add: shape mismatch " + shape_str(g.value(a).shape) + " vs " +
                                                    shape_str(g.value(b).shape));
  Tensor out = g.value(a);
  const Tensor& B = g.value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += B[i];
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [=](Graph& gr, int self) {
    for (int p : {ia, ib}) {
      if (!gr.requires_grad(p)) continue;
      const Tensor& d = gr.grad(self);
      Tensor& dp = gr.grad(p);
      for (std::size_t i = 0; i < d.numel(); ++i) dp[i] += d[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Graph& g = detail::graph_of(a);
  Tensor out = g.value(a);
  for (double& v : out.data) v *= c;
  const int ia = a.id;
  return g.push(std::move(out), g.requires_grad(a), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& da = gr.grad(ia);
    for (std::size_t i = 0; i < d.numel(); ++i) da[i] += c * d[i];
  });
}

/// Adds a bias vector along `axis` of a rank-2 view: axis 0 treats x as
/// (C, rest) with one bias per leading index; axis 1 treats x as (rows, C).
inline Var add_bias(Var x, Var b, int axis) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& B = g.value(b);
  const std::size_t C = B.numel();
  require(X.rank() >= 1, "add_bias: empty input");
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    rows = X.dim(0);
    cols = X.numel() / std::max<std::size_t>(rows, 1);
    require(rows == C, "add_bias: channel mismatch");
  } else {
    cols = X.shape.back();
    rows = X.numel() / std::max<std::size_t>(cols, 1);
    require(cols == C, "add_bias: feature mismatch");
  }
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += axis == 0 ? B[r] : B[c];
  const int ix = x.id, ib = b.id;
  return g.push(std::move(out), detail::any_grad(g, {x, b}), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(ix)) {
      Tensor& dx = gr.grad(ix);
      for (std::size_t i = 0; i < d.numel(); ++i) dx[i] += d[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) db[axis == 0 ? r : c] += d[r * cols + c];
    }
  });
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = detail::graph_of(x);
  require(shape_numel(shape) == g.value(x).numel(), "reshape: element count mismatch");
  Tensor out(std::move(shape), g.value(x).data);
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t i = 0; i < d.numel(); ++i) dx[i] += d[i];
  });
}

inline Var transpose(Var x) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 2, "transpose: rank-2 input required");
  const std::size_t R = X.dim(0), C = X.dim(1);
  Tensor out({C, R});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = X[r * C + c];
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) dx[r * C + c] += d[c * R + r];
  });
}

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_derivative(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline Var gelu(Var x) {
  Graph& g = detail::graph_of(x);
  Tensor out = g.value(x);
  for (double& v : out.data) v = gelu_value(v);
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    const Tensor& X = gr.value(ix);
    Tensor& dx = gr.grad(ix);
    for (std::size_t i = 0; i < d.numel(); ++i) dx[i] += d[i] * gelu_derivative(X[i]);
  });
}

/// 2-D convolution of a (C, H, W) input with weights (O, C, k, k) and bias (O).
inline Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  require(X.rank() == 3 && W.rank() == 4, "conv2d: expected (C,H,W) input and (O,C,k,k) weight");
  require(W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3), "conv2d: channel/kernel mismatch " + shape_str(X.shape) + " vs " +
                                                             shape_str(W.shape));
  const kernels::ConvGeometry geo{X.dim(0), X.dim(1), X.dim(2), W.dim(2), stride, pad};
  require(X.dim(1) + 2 * pad >= geo.kernel && X.dim(2) + 2 * pad >= geo.kernel, "conv2d: input smaller than kernel");
  const std::size_t O = W.dim(0), P = geo.col_cols(), R = geo.col_rows();
  auto col = std::make_shared<std::vector<double>>(R * P);
  kernels::im2col(geo, X.data.data(), col->data());
  Tensor out({O, geo.out_h(), geo.out_w()}, 0.0);
  kernels::gemm(false, false, O, P, R, W.data.data(), col->data(), out.data.data());
  const Tensor& B = g.value(b);
  require(B.numel() == O, "conv2d: bias size mismatch");
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t p = 0; p < P; ++p) out[o * P + p] += B[o];
  const int ix = x.id, iw = w.id, ib = b.id;
  const bool rg = detail::any_grad(g, {x, w, b});
  if (!rg) col.reset();
  return g.push(std::move(out), rg, [=](Graph& gr, int self) {
    const double* dY = gr.grad(self).data.data();
    if (gr.requires_grad(iw)) kernels::gemm(false, true, O, R, P, dY, col->data(), gr.grad(iw).data.data());
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t p = 0; p < P; ++p) db[o] += dY[o * P + p];
    }
    if (gr.requires_grad(ix)) {
      std::vector<double> dcol(R * P, 0.0);
      kernels::gemm(true, false, R, P, O, gr.value(iw).data.data(), dY, dcol.data());
      kernels::col2im(geo, dcol.data(), gr.grad(ix).data.data());
    }
  });
}

/// Transposed convolution with kernel 2 and stride 2: (Ci, H, W) -> (Co, 2H, 2W).
/// Weight layout (Ci, Co, 2, 2).
inline Var conv_transpose2x2(Var x, Var w, Var b) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  require(X.rank() == 3 && W.rank() == 4 && W.dim(0) == X.dim(0) && W.dim(2) == 2 && W.dim(3) == 2,
          "conv_transpose2x2: shape mismatch " + shape_str(X.shape) + " vs " + shape_str(W.shape));
  const std::size_t Ci = X.dim(0), H = X.dim(1), Wd = X.dim(2), Co = W.dim(1);
  const Tensor& B = g.value(b);
  require(B.numel() == Co, "conv_transpose2x2: bias size mismatch");
  Tensor out({Co, 2 * H, 2 * Wd}, 0.0);
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * Wd; ++j) out.at(co, i, j) = B[co];
  for (std::size_t ci = 0; ci < Ci; ++ci)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t di = 0; di < 2; ++di)
        for (std::size_t dj = 0; dj < 2; ++dj) {
          const double wv = W[((ci * Co + co) * 2 + di) * 2 + dj];
          for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < Wd; ++j) out.at(co, 2 * i + di, 2 * j + dj) += wv * X.at(ci, i, j);
        }
  const int ix = x.id, iw = w.id, ib = b.id;
  return g.push(std::move(out), detail::any_grad(g, {x, w, b}), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    const Tensor& Xv = gr.value(ix);
    const Tensor& Wv = gr.value(iw);
    const bool gx = gr.requires_grad(ix), gw = gr.requires_grad(iw);
    Tensor* dx = gx ? &gr.grad(ix) : nullptr;
    Tensor* dw = gw ? &gr.grad(iw) : nullptr;
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t widx = ((ci * Co + co) * 2 + di) * 2 + dj;
            double acc = 0.0;
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < Wd; ++j) {
                const double dy = d.at(co, 2 * i + di, 2 * j + dj);
                if (gx) dx->at(ci, i, j) += Wv[widx] * dy;
                acc += Xv.at(ci, i, j) * dy;
              }
            if (gw) (*dw)[widx] += acc;
          }
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      const std::size_t plane = 4 * H * Wd;
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t p = 0; p < plane; ++p) db[co] += d[co * plane + p];
    }
  });
}

/// Layer normalization over the last dimension of a (rows, D) tensor.
inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 2, "layer_norm_rows: rank-2 input required");
  const std::size_t R = X.dim(0), D = X.dim(1);
  require(g.value(gamma).numel() == D && g.value(beta).numel() == D, "layer_norm_rows: affine size mismatch");
  auto xhat = std::make_shared<std::vector<double>>(R * D);
  auto inv_std = std::make_shared<std::vector<double>>(R);
  Tensor out({R, D});
  const Tensor& G = g.value(gamma);
  const Tensor& Bt = g.value(beta);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < D; ++c) mean += X[r * D + c];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t c = 0; c < D; ++c) var += (X[r * D + c] - mean) * (X[r * D + c] - mean);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < D; ++c) {
      const double h = (X[r * D + c] - mean) * is;
      (*xhat)[r * D + c] = h;
      out[r * D + c] = G[c] * h + Bt[c];
    }
  }
  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  return g.push(std::move(out), detail::any_grad(g, {x, gamma, beta}), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    const Tensor& Gv = gr.value(ig);
    if (gr.requires_grad(ig)) {
      Tensor& dg = gr.grad(ig);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < D; ++c) dg[c] += d[r * D + c] * (*xhat)[r * D + c];
    }
    if (gr.requires_grad(ibt)) {
      Tensor& db = gr.grad(ibt);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < D; ++c) db[c] += d[r * D + c];
    }
    if (gr.requires_grad(ix)) {
      Tensor& dx = gr.grad(ix);
      for (std::size_t r = 0; r < R; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < D; ++c) {
          const double dh = d[r * D + c] * Gv[c];
          m1 += dh;
          m2 += dh * (*xhat)[r * D + c];
        }
        m1 /= static_cast<double>(D);
        m2 /= static_cast<double>(D);
        for (std::size_t c = 0; c < D; ++c) {
          const double dh = d[r * D + c] * Gv[c];
          dx[r * D + c] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * D + c] * m2);
        }
      }
    }
  });
}

inline Var softmax_rows(Var x) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 2, "softmax_rows: rank-2 input required");
  const std::size_t R = X.dim(0), C = X.dim(1);
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, X[r * C + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (out[r * C + c] = std::exp(X[r * C + c] - mx));
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= s;
  }
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    const Tensor& Y = gr.value(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += d[r * C + c] * Y[r * C + c];
      for (std::size_t c = 0; c < C; ++c) dx[r * C + c] += Y[r * C + c] * (d[r * C + c] - dot);
    }
  });
}

/// Multi-head scaled dot-product attention on already-projected inputs:
/// q (Nq, E), k (Nk, E), v (Nk, E) -> (Nq, E), heads split along E.
inline Var attention(Var q, Var k, Var v, std::size_t heads) {
  Graph& g = detail::graph_of(q);
  const Tensor& Q = g.value(q);
  const Tensor& K = g.value(k);
  const Tensor& V = g.value(v);
  require(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2, "attention: rank-2 inputs required");
  const std::size_t Nq = Q.dim(0), Nk = K.dim(0), E = Q.dim(1);
  require(K.dim(1) == E && V.dim(1) == E && V.dim(0) == Nk, "attention: shape mismatch");
  require(heads >= 1 && E % heads == 0, "attention: embedding dim not divisible by heads");
  const std::size_t dh = E / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<double>>(heads * Nq * Nk);
  Tensor out({Nq, E}, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < Nq; ++i) {
      double* p = probs->data() + (h * Nq + i) * Nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < Nk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * E + off + c] * K[j * E + off + c];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < Nk; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < Nk; ++j) {
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out[i * E + off + c] += p[j] * V[j * E + off + c];
      }
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return g.push(std::move(out), detail::any_grad(g, {q, k, v}), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    const Tensor& Qv = gr.value(iq);
    const Tensor& Kv = gr.value(ik);
    const Tensor& Vv = gr.value(iv);
    const bool gq = gr.requires_grad(iq), gk = gr.requires_grad(ik), gv = gr.requires_grad(iv);
    Tensor* dq = gq ? &gr.grad(iq) : nullptr;
    Tensor* dk = gk ? &gr.grad(ik) : nullptr;
    Tensor* dv = gv ? &gr.grad(iv) : nullptr;
    std::vector<double> dp(Nk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < Nq; ++i) {
        const double* p = probs->data() + (h * Nq + i) * Nk;
        double dot = 0.0;
        for (std::size_t j = 0; j < Nk; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            s += d[i * E + off + c] * Vv[j * E + off + c];
            if (gv) (*dv)[j * E + off + c] += p[j] * d[i * E + off + c];
          }
          dp[j] = s;
          dot += s * p[j];
        }
        for (std::size_t j = 0; j < Nk; ++j) {
          const double ds = p[j] * (dp[j] - dot) * sc;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) {
            if (gq) (*dq)[i * E + off + c] += ds * Kv[j * E + off + c];
            if (gk) (*dk)[j * E + off + c] += ds * Qv[i * E + off + c];
          }
        }
      }
    }
  });
}

/// Mean over the spatial axes of a (C, H, W) tensor -> (C).
inline Var global_avg_pool(Var x) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 3, "global_avg_pool: (C,H,W) input required");
  const std::size_t C = X.dim(0), P = X.dim(1) * X.dim(2);
  Tensor out({C}, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += X[c * P + p];
    out[c] = s / static_cast<double>(P);
  }
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) dx[c * P + p] += d[c] / static_cast<double>(P);
  });
}

/// Repeats a (D) vector at every spatial location: (D) -> (D, H, W).
inline Var broadcast_spatial(Var a, std::size_t H, std::size_t W) {
  Graph& g = detail::graph_of(a);
  const Tensor& A = g.value(a);
  require(H >= 1 && W >= 1, "broadcast_spatial: spatial dims must be positive");
  const std::size_t D = A.numel(), P = H * W;
  Tensor out({D, H, W});
  for (std::size_t c = 0; c < D; ++c)
    for (std::size_t p = 0; p < P; ++p) out[c * P + p] = A[c];
  const int ia = a.id;
  return g.push(std::move(out), g.requires_grad(a), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& da = gr.grad(ia);
    for (std::size_t c = 0; c < D; ++c)
      for (std::size_t p = 0; p < P; ++p) da[c] += d[c * P + p];
  });
}

namespace detail {
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_lo, w_hi;
};
/// Half-pixel-centre interpolation taps (align_corners = false).
inline LinearTaps bilinear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  const double sc = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * sc - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - static_cast<double>(i0);
    t.lo.push_back(i0);
    t.hi.push_back(i1);
    t.w_lo.push_back(1.0 - l1);
    t.w_hi.push_back(l1);
  }
  return t;
}
}  // namespace detail

inline Var bilinear_resize(Var x, std::size_t out_h, std::size_t out_w) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 3, "bilinear_resize: (C,H,W) input required");
  const std::size_t C = X.dim(0), H = X.dim(1), W = X.dim(2);
  const auto ty = detail::bilinear_taps(H, out_h);
  const auto tx = detail::bilinear_taps(W, out_w);
  Tensor out({C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        out.at(c, i, j) = ty.w_lo[i] * (tx.w_lo[j] * X.at(c, ty.lo[i], tx.lo[j]) + tx.w_hi[j] * X.at(c, ty.lo[i], tx.hi[j])) +
                          ty.w_hi[i] * (tx.w_lo[j] * X.at(c, ty.hi[i], tx.lo[j]) + tx.w_hi[j] * X.at(c, ty.hi[i], tx.hi[j]));
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
          const double v = d.at(c, i, j);
          dx.at(c, ty.lo[i], tx.lo[j]) += ty.w_lo[i] * tx.w_lo[j] * v;
          dx.at(c, ty.lo[i], tx.hi[j]) += ty.w_lo[i] * tx.w_hi[j] * v;
          dx.at(c, ty.hi[i], tx.lo[j]) += ty.w_hi[i] * tx.w_lo[j] * v;
          dx.at(c, ty.hi[i], tx.hi[j]) += ty.w_hi[i] * tx.w_hi[j] * v;
        }
  });
}

/// Stacks rank-2 tensors with equal width along rows.
inline Var concat_rows(Var a, Var b) {
  Graph& g = detail::graph_of(a);
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "concat_rows: width mismatch");
  Tensor out({A.dim(0) + B.dim(0), A.dim(1)});
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.numel()));
  const int ia = a.id, ib = b.id;
  const std::size_t na = A.numel();
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(ia)) {
      Tensor& da = gr.grad(ia);
      for (std::size_t i = 0; i < na; ++i) da[i] += d[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] += d[na + i];
    }
  });
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  require(X.rank() == 2 && begin + count <= X.dim(0), "slice_rows: out of range");
  const std::size_t W = X.dim(1);
  Tensor out({count, W});
  std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(begin * W), count * W, out.data.begin());
  const int ix = x.id;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph& gr, int self) {
    const Tensor& d = gr.grad(self);
    Tensor& dx = gr.grad(ix);
    for (std::size_t i = 0; i < count * W; ++i) dx[begin * W + i] += d[i];
  });
}

/// Sum of squares -> scalar.
inline Var sum_squares(Var x) {
  Graph& g = detail::graph_of(x);
  double s = 0.0;
  for (double v : g.value(x).data) s += v * v;
  const int ix = x.id;
  return g.push(Tensor({1}, s), g.requires_grad(x), [=](Graph& gr, int self) {
    const double d = gr.grad(self)[0];
    const Tensor& X = gr.value(ix);
    Tensor& dx = gr.grad(ix);
    for (std::size_t i = 0; i < X.numel(); ++i) dx[i] += 2.0 * X[i] * d;
  });
}

inline Var mean_all(Var x) {
  Graph& g = detail::graph_of(x);
  const Tensor& X = g.value(x);
  double s = 0.0;
  for (double v : X.data) s += v;
  const double n = static_cast<double>(X.numel());
  const int ix = x.id;
  return g.push(Tensor({1}, s / n), g.requires_grad(x), [=](Graph& gr, int self) {
    const double d = gr.grad(self)[0] / n;
    Tensor& dx = gr.grad(ix);
    for (double& v : dx.data) v += d;
  });
}

}  // namespace ops
}  // namespace avsam
