#include "osn/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "osn/autodiff.hpp"
#include "osn/ops.hpp"
#include "osn/random.hpp"

namespace osn::nets {

using namespace osn::ad;

// ---------------------------------------------------------------- ParamSet

void ParamSet::add(std::string name, Tensor leaf) {
  require(std::find(names_.begin(), names_.end(), name) == names_.end(), "duplicate parameter name " + name);
  require(leaf.is_leaf(), "parameter " + name + " must be a recorded leaf");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(leaf));
}

const Tensor& ParamSet::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  require(it != names_.end(), "no parameter named " + name);
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void ParamSet::unflatten(std::span<const double> flat) {
  require(flat.size() == count(), "unflatten: expected " + std::to_string(count()) + " values, got " +
                                      std::to_string(flat.size()));
  std::size_t off = 0;
  for (auto& t : tensors_) {
    auto dst = t.mutable_values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], Tensor::variable(tensors_[i]));
  return out;
}

void ParamSet::round_to(Precision p) {
  if (p == Precision::f64) return;
  for (auto& t : tensors_)
    for (auto& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

// -------------------------------------------------------------- Classifier

namespace {

Tensor he_normal(Rng& rng, const Shape& shape, std::size_t fan_in) {
  return Tensor::variable(shape, rng.normal_vector(numel_of(shape), std::sqrt(2.0 / static_cast<double>(fan_in))));
}

Tensor column(const Tensor& v) { return reshape(v, {v.numel(), 1}); }

Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x) {
  return add(reshape(matmul(w, column(x)), {w.extent(0)}), b);
}

}  // namespace

Classifier Classifier::build(const ClassifierArch& arch, std::uint64_t seed) {
  require(arch.input.size() == 3, "classifier input must be [C,H,W], got " + shape_str(arch.input));
  require(arch.num_classes >= 2, "classifier needs at least two classes");
  require(arch.kernel % 2 == 1, "classifier kernel must be odd");
  const std::size_t blocks = arch.channels.size();
  const std::size_t div = std::size_t{1} << blocks;
  require(arch.input[1] % div == 0 && arch.input[2] % div == 0,
          "classifier input " + shape_str(arch.input) + " not divisible by 2^" + std::to_string(blocks) +
              " for the pooling stack");
  Classifier clf;
  clf.arch_ = arch;
  Rng rng(seed);
  std::size_t cin = arch.input[0];
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::size_t cout = arch.channels[i];
    require(cout > 0, "classifier block width must be positive");
    clf.params_.add("conv" + std::to_string(i) + ".weight",
                    he_normal(rng, {cout, cin, arch.kernel, arch.kernel}, cin * arch.kernel * arch.kernel));
    clf.params_.add("conv" + std::to_string(i) + ".bias", Tensor::variable({cout}, std::vector<double>(cout, 0.0)));
    cin = cout;
  }
  const std::size_t features = cin * (arch.input[1] / div) * (arch.input[2] / div);
  clf.params_.add("head.weight", he_normal(rng, {arch.num_classes, features}, features));
  clf.params_.add("head.bias", Tensor::variable({arch.num_classes}, std::vector<double>(arch.num_classes, 0.0)));
  return clf;
}

Tensor Classifier::forward(const Tensor& x, std::vector<Tensor>* acts) const {
  require(x.shape() == arch_.input,
          "classifier input shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(arch_.input));
  const auto p = params_.tensors();
  Tensor h = x;
  std::size_t i = 0;
  for (; i < arch_.channels.size(); ++i) {
    h = relu(add_channel_bias(conv2d(h, p[2 * i], ConvSpec::same(arch_.kernel)), p[2 * i + 1]));
    if (acts) acts->push_back(h);
    h = avg_pool2(h);
  }
  return linear(p[2 * i], p[2 * i + 1], h);
}

Tensor Classifier::scores(const Tensor& x) const { return forward(x, nullptr); }

std::vector<Tensor> Classifier::activations(const Tensor& x) const {
  std::vector<Tensor> acts;
  forward(x, &acts);
  return acts;
}

std::size_t Classifier::predict(const Tensor& x) const {
  NoRecordGuard guard;
  const Tensor sc = scores(x);
  const auto s = sc.values();
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

Tensor Classifier::loss(const Tensor& x, std::size_t y) const {
  require(y < arch_.num_classes, "class id " + std::to_string(y) + " out of range for " +
                                     std::to_string(arch_.num_classes) + " classes");
  return softmax_cross_entropy(scores(x), y);
}

Classifier Classifier::clone() const {
  Classifier c;
  c.arch_ = arch_;
  c.params_ = params_.clone();
  return c;
}

QuadraticModel::QuadraticModel(std::vector<double> theta, std::size_t num_classes)
    : shape_{theta.size()}, num_classes_(num_classes) {
  require(!theta.empty(), "quadratic model needs at least one parameter");
  const std::size_t n = theta.size();
  params_.add("theta", Tensor::variable({n}, std::move(theta)));
}

Tensor QuadraticModel::loss(const Tensor& x, std::size_t y) const {
  require(y < num_classes_, "class id " + std::to_string(y) + " out of range");
  require(x.shape() == shape_, "quadratic model input shape mismatch " + shape_str(x.shape()) + " vs " +
                                   shape_str(shape_));
  const Tensor r = sub(dot(params_.tensors()[0], x), Tensor::scalar(static_cast<double>(y)));
  return scale(mul(r, r), 0.5);
}

Tensor classifier_loss(const LossModel& model, const Tensor& x, std::size_t y) { return model.loss(x, y); }

Tensor param_gradient(const LossModel& model, const Tensor& x, std::size_t y, bool carry_graph) {
  const auto& ps = model.params();
  const Tensor l = model.loss(x, y);
  const auto grads = gradient(l, ps.tensors(), carry_graph);
  return concat_flat(grads);
}

// ---------------------------------------------------------------- Denoiser

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  require(dim >= 2 && dim % 2 == 0, "timestep embedding dimension must be even and >= 2");
  const std::size_t half = dim / 2;
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * f);
    e[half + i] = std::cos(static_cast<double>(t) * f);
  }
  return e;
}

namespace {

// Input channels of each conditioned conv, in parameter order.
std::vector<std::size_t> hidden_inputs(const DenoiserArch& a) {
  std::vector<std::size_t> cin{a.image[0]};
  if (a.levels == 0) {
    for (std::size_t l = 2; l < a.dilations.size(); ++l) cin.push_back(a.channels);
    return cin;
  }
  for (std::size_t l = 1; l <= a.levels; ++l) cin.insert(cin.end(), {a.channels, a.channels});
  for (std::size_t l = 0; l < a.levels; ++l) cin.push_back(2 * a.channels);
  return cin;
}

}  // namespace

Denoiser Denoiser::build(const DenoiserArch& arch, std::uint64_t seed) {
  require(arch.image.size() == 3, "denoiser image must be [C,H,W], got " + shape_str(arch.image));
  require(arch.levels > 0 || arch.dilations.size() >= 2, "denoiser needs at least two conv layers");
  require(arch.kernel % 2 == 1, "denoiser kernel must be odd");
  require(arch.channels > 0 && arch.num_classes > 0 && arch.timesteps > 0, "denoiser widths must be positive");
  const std::size_t cell = std::size_t{1} << arch.levels;
  require(arch.levels < 8 && arch.image[1] % cell == 0 && arch.image[2] % cell == 0,
          "denoiser image " + shape_str(arch.image) + " does not halve " + std::to_string(arch.levels) + " times");
  Denoiser den;
  den.arch_ = arch;
  Rng rng(seed);
  auto& ps = den.params_;
  ps.add("time.weight", he_normal(rng, {arch.time_hidden, arch.time_dim}, arch.time_dim));
  ps.add("time.bias", Tensor::variable({arch.time_hidden}, std::vector<double>(arch.time_hidden, 0.0)));
  const auto cins = hidden_inputs(arch);
  const std::size_t k = arch.kernel, c = arch.channels;
  for (std::size_t l = 0; l <= cins.size(); ++l) {
    const bool last = l == cins.size();
    const std::size_t cin = last ? c : cins[l];
    const std::size_t cout = last ? arch.image[0] : c;
    const std::string id = std::to_string(l);
    ps.add("conv" + id + ".weight", he_normal(rng, {cout, cin, k, k}, cin * k * k));
    ps.add("conv" + id + ".bias", Tensor::variable({cout}, std::vector<double>(cout, 0.0)));
    if (!last) {
      ps.add("tproj" + id + ".weight", he_normal(rng, {cout, arch.time_hidden}, arch.time_hidden));
      ps.add("cls" + id + ".table", Tensor::variable({arch.num_classes, cout}, rng.normal_vector(arch.num_classes * cout, 0.1)));
    }
  }
  return den;
}

Tensor Denoiser::predict(const Tensor& x_t, std::size_t t, std::size_t c) const {
  require(x_t.shape() == arch_.image,
          "denoiser input shape mismatch " + shape_str(x_t.shape()) + " vs " + shape_str(arch_.image));
  require(t >= 1 && t <= arch_.timesteps,
          "timestep " + std::to_string(t) + " outside [1, " + std::to_string(arch_.timesteps) + "]");
  require(c < arch_.num_classes, "class id " + std::to_string(c) + " out of range");
  const auto p = params_.tensors();
  const Tensor temb = Tensor::constant({arch_.time_dim}, timestep_embedding(t, arch_.time_dim));
  const Tensor th = relu(linear(p[0], p[1], temb));
  std::size_t k = 2;
  auto hidden = [&](const Tensor& in, std::size_t dilation) {
    const Tensor& w = p[k++];
    const Tensor& b = p[k++];
    const Tensor& proj = p[k++];
    const Tensor& table = p[k++];
    const Tensor bias = add(add(b, reshape(matmul(proj, column(th)), {arch_.channels})), embed_lookup(table, c));
    return relu(add_channel_bias(conv2d(in, w, ConvSpec::same(arch_.kernel, dilation)), bias));
  };
  Tensor h = x_t;
  std::size_t out_dilation = 1;
  if (arch_.levels == 0) {
    for (std::size_t l = 0; l + 1 < arch_.dilations.size(); ++l) h = hidden(h, arch_.dilations[l]);
    out_dilation = arch_.dilations.back();
  } else {
    std::vector<Tensor> skips{hidden(h, 1)};
    h = skips.back();
    for (std::size_t l = 1; l <= arch_.levels; ++l) {
      h = hidden(hidden(avg_pool2(h), 1), 1);
      skips.push_back(h);
    }
    for (std::size_t l = arch_.levels; l-- > 0;) {
      const Tensor up = scale(avg_pool2_adjoint(h), 4.0);
      const Tensor& skip = skips[l];
      const Tensor parts[] = {up, skip};
      h = hidden(reshape(concat_flat(parts), {2 * arch_.channels, skip.extent(1), skip.extent(2)}), 1);
    }
  }
  const Tensor& w = p[k++];
  const Tensor& b = p[k++];
  return add_channel_bias(conv2d(h, w, ConvSpec::same(arch_.kernel, out_dilation)), b);
}

Denoiser Denoiser::clone() const {
  Denoiser d;
  d.arch_ = arch_;
  d.params_ = params_.clone();
  return d;
}

Tensor denoiser_predict(const Denoiser& den, const Tensor& x_t, std::size_t t, std::size_t c) {
  return den.predict(x_t, t, c);
}

// --------------------------------------------------------------- Optimizer

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ContractViolation("unknown optimizer '" + s + "' (expected sgd or adam)");
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
  require(lr > 0.0, "learning rate must be positive");
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  require(params.size() == grads.size(), "optimizer: parameter/gradient count mismatch");
  ++t_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].mutable_values();
      const auto g = grads[i].values();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i].values();
    require(p.size() == g.size() && p.size() == m_[i].size(), "optimizer: gradient shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * g[j];
      v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * g[j] * g[j];
      p[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + kEps);
    }
  }
}

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(ema_decay >= 0.0 && ema_decay < 1.0, "ema decay must lie in [0, 1)");
}

// ---------------------------------------------------------------- Training

double accuracy(const Classifier& clf, std::span<const LabeledImage> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : data) hits += clf.predict(s.image) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ClassifierTraining train_classifier(const ClassifierArch& arch, std::span<const LabeledImage> train,
                                    std::span<const LabeledImage> heldout, const TrainConfig& cfg) {
  cfg.validate();
  require(!train.empty(), "train_classifier: empty dataset");
  for (const auto& s : train) require(s.label < arch.num_classes, "train_classifier: label out of range");

  ClassifierTraining out{Classifier::build(arch, derive_seed(cfg.seed, 1)), {}, 0.0};
  auto& clf = out.model;
  clf.params().round_to(cfg.precision);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, 2));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train[order[i]];
        const Tensor l = clf.loss(s.image, s.label);
        batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
      }
      total += batch_loss.item();
      const Tensor mean_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const auto grads = gradient(mean_loss, clf.params().tensors());
      opt.step(clf.params().tensors(), grads);
      clf.params().round_to(cfg.precision);
    }
    out.epoch_loss.push_back(total / static_cast<double>(train.size()));
  }
  out.heldout_accuracy = accuracy(clf, heldout);
  return out;
}

}  // namespace osn::nets
