#include "osn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace osn {

const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ContractViolation("unknown precision '" + s + "' (expected f32 or f64)");
}

}  // namespace osn

namespace osn::ad {

namespace {
thread_local bool g_recording = true;
}

std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

static std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  for (auto e : shape) require(e > 0, "tensor extents must be positive, got " + shape_str(shape));
  require(numel_of(shape) == data.size(),
          "element count " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  const auto n = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::variable(Shape shape, std::vector<double> data) {
  auto n = new_node(std::move(shape), std::move(data));
  n->requires_grad = true;
  n->kind = "leaf";
  return Tensor(std::move(n));
}

Tensor Tensor::variable(const Tensor& value) { return variable(value.shape(), value.vec()); }

std::span<double> Tensor::mutable_values() { return node_->data; }

double Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const { return constant(shape(), vec()); }

Tensor Tensor::clone() const {
  if (is_leaf()) return variable(shape(), vec());
  return detach();
}

bool recording_enabled() { return g_recording; }

NoRecordGuard::NoRecordGuard() : prev_(g_recording) { g_recording = false; }
NoRecordGuard::~NoRecordGuard() { g_recording = prev_; }

RecordModeGuard::RecordModeGuard(bool enabled) : prev_(g_recording) { g_recording = enabled; }
RecordModeGuard::~RecordModeGuard() { g_recording = prev_; }

Tensor make_result(const char* kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  auto n = new_node(std::move(shape), std::move(data));
  n->kind = kind;
  if (g_recording && backward) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.recorded();
    if (any) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (const auto& t : inputs) n->inputs.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace osn::ad
