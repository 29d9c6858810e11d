#include "osn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conv_kernels.hpp"

namespace osn::ad {

namespace {

void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

void need_rank(const char* op, const Tensor& x, std::size_t rank) {
  require(x.dim() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                               ", got shape " + shape_str(x.shape()));
}

template <class F>
std::vector<double> zip(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return out;
}

template <class F>
std::vector<double> map(const Tensor& a, F f) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return out;
}

kernels::ConvGeom geom(const Shape& xs, const Shape& ws, ConvSpec spec) {
  return {xs[0], xs[1], xs[2], ws[0], ws[2], spec.pad, spec.dilation};
}

void check_conv(const char* op, const Shape& xs, const Shape& ws, ConvSpec spec) {
  require(xs.size() == 3 && ws.size() == 4,
          std::string(op) + ": expected input [C,H,W] and filter [O,C,k,k], got " + shape_str(xs) +
              " and " + shape_str(ws));
  require(ws[1] == xs[0] && ws[2] == ws[3],
          std::string(op) + ": filter " + shape_str(ws) + " does not fit input " + shape_str(xs));
  require(spec.dilation >= 1, std::string(op) + ": dilation must be >= 1");
  const std::size_t span = spec.dilation * (ws[2] - 1);
  require(xs[1] + 2 * spec.pad > span && xs[2] + 2 * spec.pad > span,
          std::string(op) + ": filter " + shape_str(ws) + " larger than padded input " + shape_str(xs));
}

Shape conv_out_shape(const Shape& xs, const Shape& ws, ConvSpec spec) {
  const auto g = geom(xs, ws, spec);
  return {ws[0], g.ho(), g.wo()};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape("add", a, b);
  return make_result("add", a.shape(), zip(a, b, std::plus<>{}), {a, b},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape("sub", a, b);
  return make_result("sub", a.shape(), zip(a, b, std::minus<>{}), {a, b},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape("mul", a, b);
  return make_result("mul", a.shape(), zip(a, b, std::multiplies<>{}), {a, b},
                     [a, b](const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{a.recorded() ? mul(g, b) : Tensor{},
                                                  b.recorded() ? mul(g, a) : Tensor{}};
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  same_shape("div", a, b);
  return make_result("div", a.shape(), zip(a, b, std::divides<>{}), {a, b},
                     [a, b](const Tensor& out, const Tensor& g) {
                       return std::vector<Tensor>{a.recorded() ? div(g, b) : Tensor{},
                                                  b.recorded() ? neg(div(mul(g, out), b)) : Tensor{}};
                     });
}

Tensor neg(const Tensor& a) {
  return make_result("neg", a.shape(), map(a, std::negate<>{}), {a},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
}

Tensor scale(const Tensor& a, double c) {
  return make_result("scale", a.shape(), map(a, [c](double v) { return c * v; }), {a},
                     [c](const Tensor&, const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  require(s.numel() == 1 && s.dim() == 0,
          "mul_scalar: second operand must be 0-d, got " + shape_str(s.shape()));
  const double sv = s.item();
  return make_result("mul_scalar", x.shape(), map(x, [sv](double v) { return v * sv; }), {x, s},
                     [x, s](const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{x.recorded() ? mul_scalar(g, s) : Tensor{},
                                                  s.recorded() ? dot(g, x) : Tensor{}};
                     });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result("sum", {}, {acc}, {x}, [x](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{mul_scalar(Tensor::ones(x.shape()), g)};
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(),
          "dot: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return make_result("dot", {}, {acc}, {a, b}, [a, b](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{a.recorded() ? reshape(mul_scalar(b, g), a.shape()) : Tensor{},
                               b.recorded() ? reshape(mul_scalar(a, g), b.shape()) : Tensor{}};
  });
}

Tensor l2_norm(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  return make_result("l2_norm", {}, {std::sqrt(acc)}, {x}, [x](const Tensor& out, const Tensor& g) {
    if (out.item() == 0.0) return std::vector<Tensor>{Tensor::zeros(x.shape())};
    return std::vector<Tensor>{mul_scalar(x, div(g, out))};
  });
}

Tensor relu_mask(const Tensor& x) {
  return Tensor::constant(x.shape(), map(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
}

Tensor relu(const Tensor& x) {
  return make_result("relu", x.shape(), map(x, [](double v) { return v > 0.0 ? v : 0.0; }), {x},
                     [x](const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{mul(g, relu_mask(x))};
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.dim() == 2 && b.dim() == 2 && a.extent(1) == b.extent(0),
          "matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> out(m * n);
  kernels::gemm(m, k, n, a.values(), b.values(), out);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{a.recorded() ? matmul(g, transpose(b)) : Tensor{},
                               b.recorded() ? matmul(transpose(a), g) : Tensor{}};
  });
}

Tensor transpose(const Tensor& a) {
  need_rank("transpose", a, 2);
  const std::size_t m = a.extent(0), n = a.extent(1);
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

// The three conv ops are the partial derivatives of one trilinear form
// <gy, conv(x, w)>, so each one's backward is expressed with the other two.
Tensor conv2d(const Tensor& x, const Tensor& w, ConvSpec spec) {
  check_conv("conv2d", x.shape(), w.shape(), spec);
  const auto g = geom(x.shape(), w.shape(), spec);
  Shape os = conv_out_shape(x.shape(), w.shape(), spec);
  std::vector<double> out(numel_of(os));
  kernels::conv_forward(g, x.values(), w.values(), out);
  return make_result("conv2d", std::move(os), std::move(out), {x, w},
                     [x, w, spec](const Tensor&, const Tensor& gy) {
                       return std::vector<Tensor>{
                           x.recorded() ? conv2d_input_grad(gy, w, x.shape(), spec) : Tensor{},
                           w.recorded() ? conv2d_weight_grad(x, gy, w.shape(), spec) : Tensor{}};
                     });
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, const Shape& input_shape, ConvSpec spec) {
  check_conv("conv2d_input_grad", input_shape, w.shape(), spec);
  require(gy.shape() == conv_out_shape(input_shape, w.shape(), spec),
          "conv2d_input_grad: shape mismatch " + shape_str(gy.shape()) + " vs " +
              shape_str(conv_out_shape(input_shape, w.shape(), spec)));
  const auto g = geom(input_shape, w.shape(), spec);
  std::vector<double> out(numel_of(input_shape));
  kernels::conv_input_grad(g, gy.values(), w.values(), out);
  return make_result("conv2d_input_grad", input_shape, std::move(out), {gy, w},
                     [gy, w, spec](const Tensor&, const Tensor& gz) {
                       return std::vector<Tensor>{
                           gy.recorded() ? conv2d(gz, w, spec) : Tensor{},
                           w.recorded() ? conv2d_weight_grad(gz, gy, w.shape(), spec) : Tensor{}};
                     });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const Shape& filter_shape, ConvSpec spec) {
  check_conv("conv2d_weight_grad", x.shape(), filter_shape, spec);
  require(gy.shape() == conv_out_shape(x.shape(), filter_shape, spec),
          "conv2d_weight_grad: shape mismatch " + shape_str(gy.shape()) + " vs " +
              shape_str(conv_out_shape(x.shape(), filter_shape, spec)));
  const auto g = geom(x.shape(), filter_shape, spec);
  std::vector<double> out(numel_of(filter_shape));
  kernels::conv_weight_grad(g, x.values(), gy.values(), out);
  return make_result("conv2d_weight_grad", filter_shape, std::move(out), {x, gy},
                     [x, gy, spec](const Tensor&, const Tensor& gu) {
                       return std::vector<Tensor>{
                           x.recorded() ? conv2d_input_grad(gy, gu, x.shape(), spec) : Tensor{},
                           gy.recorded() ? conv2d(x, gu, spec) : Tensor{}};
                     });
}

Tensor broadcast_channels(const Tensor& b, std::size_t h, std::size_t w) {
  need_rank("broadcast_channels", b, 1);
  const std::size_t c = b.extent(0);
  std::vector<double> out(c * h * w);
  for (std::size_t i = 0; i < c; ++i)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * h * w), h * w, b.at(i));
  return make_result("broadcast_channels", {c, h, w}, std::move(out), {b},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{channel_sum(g)}; });
}

Tensor channel_sum(const Tensor& x) {
  need_rank("channel_sum", x, 3);
  const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
  std::vector<double> out(c, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < hw; ++j) out[i] += xv[i * hw + j];
  return make_result("channel_sum", {c}, std::move(out), {x}, [x](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{broadcast_channels(g, x.extent(1), x.extent(2))};
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  need_rank("add_channel_bias", x, 3);
  require(b.dim() == 1 && b.extent(0) == x.extent(0),
          "add_channel_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  return add(x, broadcast_channels(b, x.extent(1), x.extent(2)));
}

Tensor avg_pool2(const Tensor& x) {
  need_rank("avg_pool2", x, 3);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<double> out(c * ho * wo);
  const auto xv = x.values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const double* p = xv.data() + (k * h + 2 * i) * w + 2 * j;
        out[(k * ho + i) * wo + j] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return make_result("avg_pool2", {c, ho, wo}, std::move(out), {x},
                     [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{avg_pool2_adjoint(g)}; });
}

Tensor avg_pool2_adjoint(const Tensor& g) {
  need_rank("avg_pool2_adjoint", g, 3);
  const std::size_t c = g.extent(0), ho = g.extent(1), wo = g.extent(2);
  const std::size_t h = 2 * ho, w = 2 * wo;
  std::vector<double> out(c * h * w);
  const auto gv = g.values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(k * h + i) * w + j] = 0.25 * gv[(k * ho + i / 2) * wo + j / 2];
  return make_result("avg_pool2_adjoint", {c, h, w}, std::move(out), {g},
                     [](const Tensor&, const Tensor& gg) { return std::vector<Tensor>{avg_pool2(gg)}; });
}

Tensor softmax(const Tensor& scores) {
  need_rank("softmax", scores, 1);
  const auto sv = scores.values();
  const double mx = *std::max_element(sv.begin(), sv.end());
  std::vector<double> out(sv.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) z += (out[i] = std::exp(sv[i] - mx));
  for (auto& v : out) v /= z;
  return make_result("softmax", scores.shape(), std::move(out), {scores},
                     [](const Tensor& p, const Tensor& g) {
                       const Tensor centered = sub(g, mul_scalar(Tensor::ones(p.shape()), dot(g, p)));
                       return std::vector<Tensor>{mul(p, centered)};
                     });
}

Tensor softmax_cross_entropy(const Tensor& scores, std::size_t label) {
  need_rank("softmax_cross_entropy", scores, 1);
  const std::size_t k = scores.extent(0);
  require(label < k, "softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(k) + " classes");
  const auto sv = scores.values();
  const double mx = *std::max_element(sv.begin(), sv.end());
  double z = 0.0;
  for (double s : sv) z += std::exp(s - mx);
  const double loss = mx + std::log(z) - sv[label];
  return make_result("softmax_cross_entropy", {}, {loss}, {scores},
                     [scores, label, k](const Tensor&, const Tensor& g) {
                       std::vector<double> onehot(k, 0.0);
                       onehot[label] = 1.0;
                       const Tensor diff = sub(softmax(scores), Tensor::constant({k}, std::move(onehot)));
                       return std::vector<Tensor>{mul_scalar(diff, g)};
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(numel_of(shape) == x.numel(),
          "reshape: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(shape));
  return make_result("reshape", shape, x.vec(), {x}, [x](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{reshape(g, x.shape())};
  });
}

Tensor pad2d(const Tensor& x, std::size_t p) {
  need_rank("pad2d", x, 3);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t hp = h + 2 * p, wp = w + 2 * p;
  std::vector<double> out(c * hp * wp, 0.0);
  const auto xv = x.values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(xv.data() + (k * h + i) * w, w, out.data() + (k * hp + i + p) * wp + p);
  return make_result("pad2d", {c, hp, wp}, std::move(out), {x},
                     [p](const Tensor&, const Tensor& g) { return std::vector<Tensor>{crop2d(g, p)}; });
}

Tensor crop2d(const Tensor& x, std::size_t p) {
  need_rank("crop2d", x, 3);
  const std::size_t c = x.extent(0), hp = x.extent(1), wp = x.extent(2);
  require(hp > 2 * p && wp > 2 * p, "crop2d: crop " + std::to_string(p) + " too large for " + shape_str(x.shape()));
  const std::size_t h = hp - 2 * p, w = wp - 2 * p;
  std::vector<double> out(c * h * w);
  const auto xv = x.values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(xv.data() + (k * hp + i + p) * wp + p, w, out.data() + (k * h + i) * w);
  return make_result("crop2d", {c, h, w}, std::move(out), {x},
                     [p](const Tensor&, const Tensor& g) { return std::vector<Tensor>{pad2d(g, p)}; });
}

Tensor embed_lookup(const Tensor& table, std::size_t row) {
  need_rank("embed_lookup", table, 2);
  const std::size_t n = table.extent(0), d = table.extent(1);
  require(row < n, "embed_lookup: row " + std::to_string(row) + " out of range for table " +
                       shape_str(table.shape()));
  std::vector<double> out(table.values().begin() + static_cast<std::ptrdiff_t>(row * d),
                          table.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
  return make_result("embed_lookup", {d}, std::move(out), {table}, [row, n](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{embed_scatter(g, row, n)};
  });
}

Tensor embed_scatter(const Tensor& g, std::size_t row, std::size_t rows) {
  need_rank("embed_scatter", g, 1);
  require(row < rows, "embed_scatter: row out of range");
  const std::size_t d = g.extent(0);
  std::vector<double> out(rows * d, 0.0);
  std::copy(g.values().begin(), g.values().end(), out.begin() + static_cast<std::ptrdiff_t>(row * d));
  return make_result("embed_scatter", {rows, d}, std::move(out), {g}, [row](const Tensor&, const Tensor& gg) {
    return std::vector<Tensor>{embed_lookup(gg, row)};
  });
}

Tensor concat_flat(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_flat: no inputs");
  std::vector<double> out;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  const std::size_t total = out.size();
  return make_result("concat_flat", {total}, std::move(out), inputs,
                     [inputs](const Tensor&, const Tensor& g) {
                       std::vector<Tensor> grads;
                       std::size_t off = 0;
                       for (const auto& p : inputs) {
                         grads.push_back(p.recorded() ? slice_flat(g, off, p.shape()) : Tensor{});
                         off += p.numel();
                       }
                       return grads;
                     });
}

Tensor slice_flat(const Tensor& x, std::size_t offset, const Shape& shape) {
  const std::size_t n = numel_of(shape);
  require(offset + n <= x.numel(), "slice_flat: slice " + shape_str(shape) + " at " + std::to_string(offset) +
                                       " exceeds " + shape_str(x.shape()));
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(offset),
                          x.values().begin() + static_cast<std::ptrdiff_t>(offset + n));
  const std::size_t total = x.numel();
  const Shape xs = x.shape();
  return make_result("slice_flat", shape, std::move(out), {x},
                     [offset, total, xs](const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{reshape(scatter_flat(g, offset, total), xs)};
                     });
}

Tensor scatter_flat(const Tensor& x, std::size_t offset, std::size_t total) {
  require(offset + x.numel() <= total, "scatter_flat: range exceeds target length");
  std::vector<double> out(total, 0.0);
  std::copy(x.values().begin(), x.values().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
  const Shape xs = x.shape();
  return make_result("scatter_flat", {total}, std::move(out), {x}, [offset, xs](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{slice_flat(reshape(g, {g.numel()}), offset, xs)};
  });
}

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul-elementwise";
    case OpKind::scale: return "scalar-scale";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::l2_norm: return "l2-norm";
    case OpKind::dot: return "dot";
    case OpKind::softmax_cross_entropy: return "softmax-cross-entropy";
    case OpKind::reshape: return "reshape";
    case OpKind::pad: return "pad";
    case OpKind::embed_lookup: return "embed-lookup";
  }
  return "?";
}

Tensor apply(OpKind kind, std::span<const Tensor> in, const OpParams& p) {
  auto arity = [&](std::size_t n) {
    require(in.size() == n, std::string("apply(") + to_string(kind) + "): expected " + std::to_string(n) +
                                " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::add: arity(2); return add(in[0], in[1]);
    case OpKind::sub: arity(2); return sub(in[0], in[1]);
    case OpKind::mul: arity(2); return mul(in[0], in[1]);
    case OpKind::scale: arity(1); return scale(in[0], p.factor);
    case OpKind::matmul: arity(2); return matmul(in[0], in[1]);
    case OpKind::conv2d: arity(2); return conv2d(in[0], in[1], p.conv);
    case OpKind::relu: arity(1); return relu(in[0]);
    case OpKind::sum: arity(1); return sum(in[0]);
    case OpKind::mean: arity(1); return mean(in[0]);
    case OpKind::l2_norm: arity(1); return l2_norm(in[0]);
    case OpKind::dot: arity(2); return dot(in[0], in[1]);
    case OpKind::softmax_cross_entropy: arity(1); return softmax_cross_entropy(in[0], p.index);
    case OpKind::reshape: arity(1); return reshape(in[0], p.shape);
    case OpKind::pad: arity(1); return pad2d(in[0], p.pad);
    case OpKind::embed_lookup: arity(1); return embed_lookup(in[0], p.index);
  }
  throw ContractViolation("apply: unknown op kind");
}

}  // namespace osn::ad
