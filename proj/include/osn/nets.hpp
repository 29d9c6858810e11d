#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "osn/tensor.hpp"

namespace osn::nets {

using ad::Shape;
using ad::Tensor;

// Named trainable tensors in a fixed order. That order defines the layout of
// every flat parameter vector (param_gradient, flatten, archives).
class ParamSet {
 public:
  void add(std::string name, Tensor leaf);

  std::span<const Tensor> tensors() const { return tensors_; }
  std::span<Tensor> tensors() { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& get(const std::string& name) const;
  std::size_t count() const;  // total scalar parameters

  std::vector<double> flatten() const;
  // Overwrites every tensor from a flat vector of length count().
  void unflatten(std::span<const double> flat);
  // Independent copy (fresh leaves, same values).
  ParamSet clone() const;
  void round_to(Precision p);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Anything with a differentiable loss L_theta(x, y) over a parameter set.
class LossModel {
 public:
  virtual ~LossModel() = default;
  virtual Tensor loss(const Tensor& x, std::size_t y) const = 0;
  virtual const ParamSet& params() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual const Shape& input_shape() const = 0;
};

struct ClassifierArch {
  Shape input{1, 24, 24};
  // One block per entry: 3x3 same conv with this many filters, relu, 2x2 mean pool.
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel = 3;
  std::size_t num_classes = 2;
};

// Conv stack plus linear head. Parameter order: for each block
// conv{i}.weight [O,C,k,k], conv{i}.bias [O]; then head.weight [K,F], head.bias [K].
// Weights are He-normal (stddev sqrt(2 / fan_in)), biases zero.
class Classifier final : public LossModel {
 public:
  static Classifier build(const ClassifierArch& arch, std::uint64_t seed);

  Tensor scores(const Tensor& x) const;
  // Post-relu activation of each conv block, before pooling.
  std::vector<Tensor> activations(const Tensor& x) const;
  std::size_t predict(const Tensor& x) const;

  Tensor loss(const Tensor& x, std::size_t y) const override;
  const ParamSet& params() const override { return params_; }
  ParamSet& params() { return params_; }
  std::size_t num_classes() const override { return arch_.num_classes; }
  const Shape& input_shape() const override { return arch_.input; }
  const ClassifierArch& arch() const { return arch_; }
  Classifier clone() const;

 private:
  Tensor forward(const Tensor& x, std::vector<Tensor>* acts) const;
  ClassifierArch arch_;
  ParamSet params_;
};

// Toy model L = (theta . x - y)^2 / 2 with y read as a number. Small enough
// to check gradient-of-gradient results by hand.
class QuadraticModel final : public LossModel {
 public:
  QuadraticModel(std::vector<double> theta, std::size_t num_classes = 2);
  Tensor loss(const Tensor& x, std::size_t y) const override;
  const ParamSet& params() const override { return params_; }
  std::size_t num_classes() const override { return num_classes_; }
  const Shape& input_shape() const override { return shape_; }

 private:
  ParamSet params_;
  Shape shape_;
  std::size_t num_classes_;
};

Tensor classifier_loss(const LossModel& model, const Tensor& x, std::size_t y);

// dL/dtheta concatenated in parameter order. With carry_graph the result is
// differentiable with respect to x when x is a recorded leaf.
Tensor param_gradient(const LossModel& model, const Tensor& x, std::size_t y, bool carry_graph);

struct DenoiserArch {
  Shape image{1, 24, 24};
  std::size_t channels = 32;
  // One entry per conv layer; the last layer maps back to image channels.
  // Used when levels == 0.
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  // > 0 switches to a small U-Net: 2x mean-pool down `levels` times (two convs
  // per coarse level), nearest upsampling back with skip concatenation.
  std::size_t levels = 0;
  std::size_t kernel = 3;
  std::size_t time_dim = 32;
  std::size_t time_hidden = 64;
  std::size_t num_classes = 2;
  std::size_t timesteps = 200;
};

// Sinusoidal timestep features: [sin(t f_0..f_{d/2-1}), cos(t f_0..)] with
// f_i = 10000^(-i / (d/2)).
std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

// Resolution-preserving conv trunk predicting the injected noise. Every hidden
// layer receives a per-channel bias  b_l + P_l h(t) + E_l[c]  where h(t) is a
// shared relu MLP over the timestep features and E_l a class table.
// Parameter order: time.weight, time.bias, then per layer conv{l}.weight,
// conv{l}.bias and (hidden layers only) tproj{l}.weight, cls{l}.table.
class Denoiser {
 public:
  static Denoiser build(const DenoiserArch& arch, std::uint64_t seed);

  Tensor predict(const Tensor& x_t, std::size_t t, std::size_t c) const;

  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const DenoiserArch& arch() const { return arch_; }
  Denoiser clone() const;

 private:
  DenoiserArch arch_;
  ParamSet params_;
};

Tensor denoiser_predict(const Denoiser& den, const Tensor& x_t, std::size_t t, std::size_t c);

enum class OptimizerKind { sgd, adam };
OptimizerKind parse_optimizer(const std::string& s);
const char* to_string(OptimizerKind k);

// Plain gradient step or Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr);
  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  std::size_t steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  // Denoiser only: the returned weights are an exponential moving average of
  // the iterates with this decay (warmed up as min(d, (1+n)/(10+n))). 0 = off.
  double ema_decay = 0.0;

  void validate() const;
};

struct LabeledImage {
  Tensor image;
  std::size_t label = 0;
};

struct ClassifierTraining {
  Classifier model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double heldout_accuracy = 0.0;   // NaN-free; 0 when no held-out set
};

ClassifierTraining train_classifier(const ClassifierArch& arch, std::span<const LabeledImage> train,
                                    std::span<const LabeledImage> heldout, const TrainConfig& cfg);

double accuracy(const Classifier& clf, std::span<const LabeledImage> data);

}  // namespace osn::nets
