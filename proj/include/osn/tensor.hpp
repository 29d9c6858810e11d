#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "osn/common.hpp"

namespace osn::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

// Backward rule of a recorded node: receives the node's own output and the
// upstream gradient, returns one gradient per input (a null Tensor when that
// input does not need one). Rules are written in terms of differentiable ops,
// so running them with recording enabled yields a differentiable gradient.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  const char* kind = "const";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;  // empty for leaves and constants
};

// Value type of the engine: a shape plus a dense row-major buffer, optionally
// attached to the computation record. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  // Leaf that participates in differentiation.
  static Tensor variable(Shape shape, std::vector<double> data);
  static Tensor variable(const Tensor& value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> values() const { return node_->data; }
  const std::vector<double>& vec() const { return node_->data; }
  // In-place access for optimizers updating leaves between records.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return node_->data.at(i); }

  bool recorded() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->requires_grad && !node_->backward; }
  const char* kind() const { return node_->kind; }

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Thread-local switch for recording. Gradient passes without carry-graph run
// with recording disabled.
bool recording_enabled();

class NoRecordGuard {
 public:
  NoRecordGuard();
  ~NoRecordGuard();
  NoRecordGuard(const NoRecordGuard&) = delete;
  NoRecordGuard& operator=(const NoRecordGuard&) = delete;

 private:
  bool prev_;
};

class RecordModeGuard {
 public:
  explicit RecordModeGuard(bool enabled);
  ~RecordModeGuard();
  RecordModeGuard(const RecordModeGuard&) = delete;
  RecordModeGuard& operator=(const RecordModeGuard&) = delete;

 private:
  bool prev_;
};

// Builds the output of an op. When recording is on and any input is recorded
// the node is attached to the record with the given backward rule.
Tensor make_result(const char* kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

bool all_finite(std::span<const double> v);

}  // namespace osn::ad
