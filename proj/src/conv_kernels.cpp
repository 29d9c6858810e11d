#include "conv_kernels.hpp"

#include <Eigen/Core>
#include <vector>

namespace osn::ad::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// cols is [C*k*k, Ho*Wo].
std::vector<double> im2col(const ConvGeom& g, std::span<const double> x) {
  const std::size_t ho = g.ho(), wo = g.wo();
  std::vector<double> cols(g.c * g.k * g.k * ho * wo, 0.0);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b, ++row) {
        double* dst = cols.data() + row * ho * wo;
        const long dr = static_cast<long>(a * g.dil) - static_cast<long>(g.pad);
        const long dc = static_cast<long>(b * g.dil) - static_cast<long>(g.pad);
        for (std::size_t i = 0; i < ho; ++i) {
          const long r = static_cast<long>(i) + dr;
          if (r < 0 || r >= static_cast<long>(g.h)) continue;
          const double* src = x.data() + (c * g.h + r) * g.w;
          for (std::size_t j = 0; j < wo; ++j) {
            const long q = static_cast<long>(j) + dc;
            if (q >= 0 && q < static_cast<long>(g.w)) dst[i * wo + j] = src[q];
          }
        }
      }
  return cols;
}

void col2im_add(const ConvGeom& g, const std::vector<double>& cols, std::span<double> x) {
  const std::size_t ho = g.ho(), wo = g.wo();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b, ++row) {
        const double* src = cols.data() + row * ho * wo;
        const long dr = static_cast<long>(a * g.dil) - static_cast<long>(g.pad);
        const long dc = static_cast<long>(b * g.dil) - static_cast<long>(g.pad);
        for (std::size_t i = 0; i < ho; ++i) {
          const long r = static_cast<long>(i) + dr;
          if (r < 0 || r >= static_cast<long>(g.h)) continue;
          double* dst = x.data() + (c * g.h + r) * g.w;
          for (std::size_t j = 0; j < wo; ++j) {
            const long q = static_cast<long>(j) + dc;
            if (q >= 0 && q < static_cast<long>(g.w)) dst[q] += src[i * wo + j];
          }
        }
      }
}

}  // namespace

void conv_forward(const ConvGeom& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y) {
  const auto cols = im2col(g, x);
  const std::size_t ckk = g.c * g.k * g.k, hw = g.ho() * g.wo();
  CMap W(w.data(), g.o, ckk);
  CMap X(cols.data(), ckk, hw);
  MMap Y(y.data(), g.o, hw);
  Y.noalias() = W * X;
}

void conv_input_grad(const ConvGeom& g, std::span<const double> gy, std::span<const double> w,
                     std::span<double> gx) {
  const std::size_t ckk = g.c * g.k * g.k, hw = g.ho() * g.wo();
  std::vector<double> cols(ckk * hw);
  CMap W(w.data(), g.o, ckk);
  CMap GY(gy.data(), g.o, hw);
  MMap C(cols.data(), ckk, hw);
  C.noalias() = W.transpose() * GY;
  std::fill(gx.begin(), gx.end(), 0.0);
  col2im_add(g, cols, gx);
}

void conv_weight_grad(const ConvGeom& g, std::span<const double> x, std::span<const double> gy,
                      std::span<double> gw) {
  const auto cols = im2col(g, x);
  const std::size_t ckk = g.c * g.k * g.k, hw = g.ho() * g.wo();
  CMap X(cols.data(), ckk, hw);
  CMap GY(gy.data(), g.o, hw);
  MMap GW(gw.data(), g.o, ckk);
  GW.noalias() = GY * X.transpose();
}

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  CMap A(a.data(), m, k);
  CMap B(b.data(), k, n);
  MMap C(c.data(), m, n);
  C.noalias() = A * B;
}

}  // namespace osn::ad::kernels
