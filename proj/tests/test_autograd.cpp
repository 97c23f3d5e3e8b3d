#include <gtest/gtest.h>

#include <cmath>

#include "avsam/autograd.hpp"
#include "test_util.hpp"

using namespace avsam;
using testutil::op_grad_error;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-6;
}

TEST(AutogradGradients, MatmulAllTransposeCases) {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Tensor a = random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, 1);
      const Tensor b = random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, 2);
      EXPECT_LT(op_grad_error({a, b}, [&](Graph&, const std::vector<Var>& v) { return ops::matmul(v[0], v[1], ta, tb); }),
                kTol)
          << "ta=" << ta << " tb=" << tb;
    }
}

TEST(AutogradGradients, ElementwiseAndBias) {
  const Tensor x = random_tensor({3, 5}, 3);
  EXPECT_LT(op_grad_error({x, random_tensor({3, 5}, 4)},
                          [](Graph&, const std::vector<Var>& v) { return ops::add(v[0], v[1]); }),
            kTol);
  EXPECT_LT(op_grad_error({x}, [](Graph&, const std::vector<Var>& v) { return ops::scale(v[0], -2.5); }), kTol);
  EXPECT_LT(op_grad_error({x, random_tensor({3}, 5)},
                          [](Graph&, const std::vector<Var>& v) { return ops::add_bias(v[0], v[1], 0); }),
            kTol);
  EXPECT_LT(op_grad_error({x, random_tensor({5}, 6)},
                          [](Graph&, const std::vector<Var>& v) { return ops::add_bias(v[0], v[1], 1); }),
            kTol);
  EXPECT_LT(op_grad_error({x}, [](Graph&, const std::vector<Var>& v) { return ops::gelu(v[0]); }), kTol);
  EXPECT_LT(op_grad_error({x}, [](Graph&, const std::vector<Var>& v) { return ops::transpose(v[0]); }), kTol);
}

TEST(AutogradGradients, Conv2dStridesAndPadding) {
  const Tensor x = random_tensor({2, 7, 6}, 7);
  const Tensor b = random_tensor({3}, 9);
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{4, 4, 0}}) {
    const Tensor w = random_tensor({3, 2, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, 8);
    EXPECT_LT(op_grad_error({x, w, b},
                            [&](Graph&, const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], stride, pad); }),
              kTol)
        << "k=" << k << " stride=" << stride;
  }
}

TEST(AutogradGradients, ConvTranspose) {
  EXPECT_LT(op_grad_error({random_tensor({3, 2, 3}, 10), random_tensor({3, 2, 2, 2}, 11), random_tensor({2}, 12)},
                          [](Graph&, const std::vector<Var>& v) { return ops::conv_transpose2x2(v[0], v[1], v[2]); }),
            kTol);
}

TEST(AutogradGradients, LayerNormSoftmaxAttention) {
  EXPECT_LT(op_grad_error({random_tensor({4, 6}, 13), random_tensor({6}, 14), random_tensor({6}, 15)},
                          [](Graph&, const std::vector<Var>& v) { return ops::layer_norm_rows(v[0], v[1], v[2]); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({3, 5}, 16, -3, 3)},
                          [](Graph&, const std::vector<Var>& v) { return ops::softmax_rows(v[0]); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({3, 8}, 17), random_tensor({5, 8}, 18), random_tensor({5, 8}, 19)},
                          [](Graph&, const std::vector<Var>& v) { return ops::attention(v[0], v[1], v[2], 2); }),
            kTol);
}

TEST(AutogradGradients, PoolBroadcastResizeAndRows) {
  EXPECT_LT(op_grad_error({random_tensor({3, 4, 5}, 20)},
                          [](Graph&, const std::vector<Var>& v) { return ops::global_avg_pool(v[0]); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({3}, 21)},
                          [](Graph&, const std::vector<Var>& v) { return ops::broadcast_spatial(v[0], 2, 3); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({2, 3, 4}, 22)},
                          [](Graph&, const std::vector<Var>& v) { return ops::bilinear_resize(v[0], 7, 5); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({2, 4}, 23), random_tensor({3, 4}, 24)},
                          [](Graph&, const std::vector<Var>& v) { return ops::concat_rows(v[0], v[1]); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({5, 4}, 25)},
                          [](Graph&, const std::vector<Var>& v) { return ops::slice_rows(v[0], 1, 3); }),
            kTol);
  EXPECT_LT(op_grad_error({random_tensor({5, 4}, 26)},
                          [](Graph&, const std::vector<Var>& v) { return ops::sum_squares(v[0]); }),
            kTol);
}

TEST(AutogradValues, Conv2dMatchesDirectLoop) {
  const Tensor x = random_tensor({2, 6, 5}, 30), w = random_tensor({3, 2, 3, 3}, 31), b = random_tensor({3}, 32);
  Graph g;
  const Tensor out = g.value(ops::conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1));
  ASSERT_EQ(out.shape, (Shape{3, 3, 3}));
  for (std::size_t co = 0; co < 3; ++co)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = b[co];
        for (std::size_t ci = 0; ci < 2; ++ci)
          for (std::size_t ki = 0; ki < 3; ++ki)
            for (std::size_t kj = 0; kj < 3; ++kj) {
              const long y = static_cast<long>(2 * i + ki) - 1, xx = static_cast<long>(2 * j + kj) - 1;
              if (y < 0 || y >= 6 || xx < 0 || xx >= 5) continue;
              s += w[((co * 2 + ci) * 3 + ki) * 3 + kj] * x.at(ci, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
            }
        EXPECT_NEAR(out.at(co, i, j), s, 1e-12);
      }
}

TEST(AutogradValues, BilinearHalfPixelUpsample) {
  // 2x2 -> 4x4 with half-pixel centres (edge values clamp).
  Graph g;
  const Tensor out = g.value(ops::bilinear_resize(g.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})), 4, 4));
  const std::vector<double> expected = {1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5,
                                        2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12) << i;
}

TEST(AutogradValues, AttentionMatchesSingleHeadLoop) {
  const Tensor q = random_tensor({2, 4}, 40), k = random_tensor({3, 4}, 41), v = random_tensor({3, 4}, 42);
  Graph g;
  const Tensor out = g.value(ops::attention(g.constant(q), g.constant(k), g.constant(v), 1));
  for (std::size_t i = 0; i < 2; ++i) {
    double s[3], z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      s[j] = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s[j] += q.at(i, c) * k.at(j, c);
      s[j] = std::exp(s[j] / 2.0);
      z += s[j];
    }
    for (std::size_t c = 0; c < 4; ++c) {
      double o = 0.0;
      for (std::size_t j = 0; j < 3; ++j) o += s[j] / z * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), o, 1e-12);
    }
  }
}

TEST(AutogradValues, LayerNormRowsAreStandardised) {
  Graph g;
  const Tensor out = g.value(ops::layer_norm_rows(g.constant(random_tensor({3, 8}, 50, -4, 4)),
                                                  g.constant(Tensor({8}, 1.0)), g.constant(Tensor({8}, 0.0))));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += out.at(r, c) / 8.0;
    for (std::size_t c = 0; c < 8; ++c) v += (out.at(r, c) - m) * (out.at(r, c) - m) / 8.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(AutogradGraph, ConstantsReceiveNoGradientAndShapesAreChecked) {
  Graph g;
  const Var c = g.constant(Tensor({2, 2}, 1.0));
  const Var x = g.leaf(Tensor({2, 2}, 2.0));
  const Var loss = ops::sum_squares(ops::matmul(c, x));
  g.backward(loss);
  EXPECT_FALSE(g.has_grad(c.id));
  EXPECT_TRUE(g.has_grad(x.id));
  EXPECT_THROW(ops::matmul(c, g.constant(Tensor({3, 2}))), ContractError);
}
