#pragma once

#include <cstddef>
#include <span>

// Raw im2col/GEMM kernels behind the conv2d op family. All buffers are dense
// row-major; x is [C,H,W], w is [O,C,k,k], y is [O,Ho,Wo].
namespace osn::ad::kernels {

struct ConvGeom {
  std::size_t c, h, w;     // input
  std::size_t o, k;        // filters
  std::size_t pad, dil;
  std::size_t ho() const { return h + 2 * pad - dil * (k - 1); }
  std::size_t wo() const { return w + 2 * pad - dil * (k - 1); }
};

void conv_forward(const ConvGeom& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y);
void conv_input_grad(const ConvGeom& g, std::span<const double> gy, std::span<const double> w,
                     std::span<double> gx);
void conv_weight_grad(const ConvGeom& g, std::span<const double> x, std::span<const double> gy,
                      std::span<double> gw);

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c);

}  // namespace osn::ad::kernels
