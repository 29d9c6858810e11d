#pragma once

#include <span>
#include <vector>

#include "osn/tensor.hpp"

// Differentiable operations. Shapes follow these rules (violations raise
// ContractViolation naming both shapes):
//   add/sub/mul/div        equal shapes
//   scale                  any shape times a plain constant
//   mul_scalar(x, s)       any shape times a 0-d tensor
//   sum/mean               any shape -> []
//   dot                    equal element counts -> []
//   l2_norm                any shape -> []; gradient at 0 is 0
//   relu                   any shape; gradient at 0 is 0
//   matmul                 [m,k] x [k,n] -> [m,n]
//   conv2d                 [C,H,W] x [O,C,k,k] -> [O,H',W'] (cross-correlation)
//   softmax_cross_entropy  [K] and a label -> []
//   reshape                equal element counts
//   pad2d/crop2d           [C,H,W] <-> [C,H+2p,W+2p]
//   embed_lookup           [N,D] table, row id -> [D]
namespace osn::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& x, const Tensor& s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor l2_norm(const Tensor& x);

Tensor relu(const Tensor& x);
// 1 where x > 0, else 0. Never recorded.
Tensor relu_mask(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

struct ConvSpec {
  std::size_t pad = 0;
  std::size_t dilation = 1;

  static ConvSpec valid() { return {0, 1}; }
  // Resolution-preserving padding for an odd kernel.
  static ConvSpec same(std::size_t kernel, std::size_t dilation = 1) {
    return {dilation * (kernel - 1) / 2, dilation};
  }
};

Tensor conv2d(const Tensor& x, const Tensor& w, ConvSpec spec);
// Adjoint of conv2d with respect to its input; `input_shape` is [C,H,W].
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, const Shape& input_shape, ConvSpec spec);
// Adjoint of conv2d with respect to its filter; `filter_shape` is [O,C,k,k].
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const Shape& filter_shape, ConvSpec spec);

// [C] -> [C,H,W], each channel filled with its value.
Tensor broadcast_channels(const Tensor& b, std::size_t h, std::size_t w);
// [C,H,W] -> [C]
Tensor channel_sum(const Tensor& x);
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

// 2x2 mean pooling, [C,H,W] -> [C,H/2,W/2] with even H, W.
Tensor avg_pool2(const Tensor& x);
// Adjoint of avg_pool2: each value spread over its 2x2 block, divided by 4.
Tensor avg_pool2_adjoint(const Tensor& g);

Tensor softmax(const Tensor& scores);
Tensor softmax_cross_entropy(const Tensor& scores, std::size_t label);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor pad2d(const Tensor& x, std::size_t p);
Tensor crop2d(const Tensor& x, std::size_t p);

Tensor embed_lookup(const Tensor& table, std::size_t row);
Tensor embed_scatter(const Tensor& g, std::size_t row, std::size_t rows);

// Flattened concatenation, and the slice/scatter pair that undoes it.
Tensor concat_flat(std::span<const Tensor> parts);
Tensor slice_flat(const Tensor& x, std::size_t offset, const Shape& shape);
Tensor scatter_flat(const Tensor& x, std::size_t offset, std::size_t total);

enum class OpKind {
  add,
  sub,
  mul,
  scale,
  matmul,
  conv2d,
  relu,
  sum,
  mean,
  l2_norm,
  dot,
  softmax_cross_entropy,
  reshape,
  pad,
  embed_lookup,
};

inline constexpr OpKind kAllOpKinds[] = {
    OpKind::add,  OpKind::sub,     OpKind::mul, OpKind::scale,   OpKind::matmul,
    OpKind::conv2d, OpKind::relu,  OpKind::sum, OpKind::mean,    OpKind::l2_norm,
    OpKind::dot,  OpKind::softmax_cross_entropy, OpKind::reshape, OpKind::pad,
    OpKind::embed_lookup,
};

const char* to_string(OpKind k);

struct OpParams {
  double factor = 1.0;       // scale
  ConvSpec conv{};           // conv2d
  std::size_t index = 0;     // label (cross-entropy) or row (embed_lookup)
  std::size_t pad = 0;       // pad
  Shape shape{};             // reshape target
};

// Uniform entry point over the op vocabulary.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpParams& params = {});

}  // namespace osn::ad
