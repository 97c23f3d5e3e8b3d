#pragma once

#include <cstddef>
#include <span>

#include <cblas.h>

namespace avsam::kernels {

/// C (M x N) += op(A) * op(B), all row-major. op(A) is M x K, op(B) is K x N.
/// When trans_a, A is stored K x M; when trans_b, B is stored N x K.
inline void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K,
                 const double* A, const double* B, double* C) {
  if (M == 0 || N == 0 || K == 0) return;
  const auto m = static_cast<blasint>(M), n = static_cast<blasint>(N), k = static_cast<blasint>(K);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, A,
              trans_a ? m : k, B, trans_b ? k : n, 1.0, C, n);
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t kernel, stride, pad;
  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return in_c * kernel * kernel; }
  std::size_t col_cols() const { return out_h() * out_w(); }
};

/// Unfolds (C, H, W) input patches into a (C*k*k, OH*OW) matrix.
inline void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const long y = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t j = 0; j < ow; ++j) {
            const long xx = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = y >= 0 && y < static_cast<long>(g.in_h) && xx >= 0 && xx < static_cast<long>(g.in_w);
            row[i * ow + j] = inside ? x[(c * g.in_h + y) * g.in_w + xx] : 0.0;
          }
        }
      }
}

/// Adjoint of im2col: scatters-adds column gradients back into (C, H, W).
inline void col2im(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const long y = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
          if (y < 0 || y >= static_cast<long>(g.in_h)) continue;
          for (std::size_t j = 0; j < ow; ++j) {
            const long xx = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
            if (xx < 0 || xx >= static_cast<long>(g.in_w)) continue;
            x[(c * g.in_h + y) * g.in_w + xx] += row[i * ow + j];
          }
        }
      }
}

}  // namespace avsam::kernels
