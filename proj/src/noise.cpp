#include "osn/noise.hpp"

#include <algorithm>
#include <cmath>

#include "osn/autodiff.hpp"
#include "osn/ops.hpp"
#include "osn/random.hpp"

namespace osn::noise {

using namespace osn::ad;

Tensor cosine_gradient_distance(const Tensor& g, const Tensor& g_star) {
  require(g.numel() == g_star.numel(), "cosine_gradient_distance: length mismatch " + shape_str(g.shape()) +
                                           " vs " + shape_str(g_star.shape()));
  const Tensor ng = l2_norm(g);
  const Tensor ns = l2_norm(g_star);
  if (ng.item() == 0.0 || ns.item() == 0.0)
    throw ZeroNormGradient("cosine_gradient_distance: zero-norm gradient", -1);
  const Tensor cos = div(dot(g, g_star), mul(ng, ns));
  return sub(Tensor::scalar(1.0), cos);
}

void IGConfig::validate() const {
  require(learning_rate > 0.0, "inversion learning rate must be positive");
  require(tv_weight >= 0.0, "tv weight must be nonnegative");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    require(snapshots[i] <= steps, "snapshot step " + std::to_string(snapshots[i]) + " exceeds k = " +
                                       std::to_string(steps));
    require(i == 0 || snapshots[i - 1] < snapshots[i], "snapshot steps must be sorted and unique");
  }
}

namespace {

// Mean squared forward difference along rows and columns.
Tensor tv_penalty(const Tensor& x) {
  const std::size_t c = x.extent(0);
  std::vector<double> filt(2 * c * 9, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double* dy = filt.data() + k * 9;
    double* dx = filt.data() + (c + k) * 9;
    dy[4] = -1.0;
    dy[7] = 1.0;
    dx[4] = -1.0;
    dx[5] = 1.0;
  }
  const Tensor d = conv2d(x, Tensor::constant({2, c, 3, 3}, std::move(filt)), ConvSpec::valid());
  return scale(dot(d, d), 1.0 / static_cast<double>(d.numel()));
}

double decayed_rate(const IGConfig& cfg, std::size_t i) {
  double lr = cfg.learning_rate;
  for (std::size_t eighths : {3u, 5u, 7u})
    if (8 * i >= eighths * cfg.steps) lr *= 0.1;
  return lr;
}

}  // namespace

double inversion_objective(const nets::LossModel& model, const Tensor& x, const Tensor& g_star, std::size_t y) {
  RecordModeGuard rec(true);
  return cosine_gradient_distance(nets::param_gradient(model, x, y, false), g_star).item();
}

std::vector<IGSnapshot> invert_gradients(const nets::LossModel& model, const Tensor& g_star, std::size_t y,
                                         const IGConfig& cfg) {
  cfg.validate();
  require(g_star.numel() == model.params().count(),
          "invert_gradients: target gradient has " + std::to_string(g_star.numel()) + " entries, model has " +
              std::to_string(model.params().count()) + " parameters");
  require(y < model.num_classes(), "invert_gradients: class id out of range");

  Rng init(cfg.init_seed);
  Tensor x = Tensor::variable(model.input_shape(), init.normal_vector(numel_of(model.input_shape())));
  std::vector<Tensor> xs{x};
  nets::Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<std::size_t> wanted = cfg.snapshots;
  if (wanted.empty() || wanted.back() != cfg.steps) wanted.push_back(cfg.steps);
  std::vector<IGSnapshot> out;
  auto next = wanted.begin();

  for (std::size_t i = 0;; ++i) {
    RecordModeGuard rec(true);
    Tensor objective;
    try {
      const Tensor g = nets::param_gradient(model, x, y, true);
      objective = cosine_gradient_distance(g, g_star);
    } catch (const ZeroNormGradient&) {
      throw ZeroNormGradient("invert_gradients: zero-norm parameter gradient at step " + std::to_string(i),
                             static_cast<long>(i));
    }
    if (next != wanted.end() && *next == i) {
      out.push_back({i, x.detach(), objective.item()});
      ++next;
    }
    if (i == cfg.steps) break;
    if (cfg.lr_decay) opt.set_learning_rate(decayed_rate(cfg, i));
    if (cfg.tv_weight > 0.0) objective = add(objective, scale(tv_penalty(x), cfg.tv_weight));
    Tensor gx = gradient(objective, x);
    if (cfg.signed_gradient) {
      std::vector<double> s(gx.numel());
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = static_cast<double>((gx.at(j) > 0.0) - (gx.at(j) < 0.0));
      gx = Tensor::constant(gx.shape(), std::move(s));
    }
    opt.step(xs, std::vector<Tensor>{gx});
  }
  return out;
}

Standardized standardize(const Tensor& x) {
  require(x.numel() >= 2, "standardize: need at least two elements");
  const auto v = x.values();
  const double n = static_cast<double>(v.size());
  double mu = 0.0;
  for (double e : v) mu += e;
  mu /= n;
  double var = 0.0;
  for (double e : v) var += (e - mu) * (e - mu);
  var /= n;
  require(var > 0.0 && std::isfinite(var), "standardize: zero variance (constant image)");
  const double sd = std::sqrt(var);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mu) / sd;
  return {Tensor::constant(x.shape(), std::move(out)), mu, sd};
}

Tensor fgsm_map(const nets::LossModel& model, const Tensor& x, std::size_t y, double eps) {
  require(eps > 0.0, "fgsm_map: magnitude must be positive");
  RecordModeGuard rec(true);
  const Tensor leaf = Tensor::variable(x);
  const Tensor gx = gradient(model.loss(leaf, y), leaf);
  std::vector<double> out(gx.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps * static_cast<double>((gx.at(i) > 0.0) - (gx.at(i) < 0.0));
  return Tensor::constant(x.shape(), std::move(out));
}

Tensor feature_map_saliency(const nets::Classifier& clf, const Tensor& x, std::size_t layer) {
  require(layer < clf.arch().channels.size(), "feature_map_saliency: layer " + std::to_string(layer) +
                                                  " out of range (" + std::to_string(clf.arch().channels.size()) +
                                                  " conv blocks)");
  NoRecordGuard guard;
  const Tensor a = clf.activations(x)[layer];
  const std::size_t c = a.extent(0), h = a.extent(1), w = a.extent(2);
  const std::size_t H = x.extent(1), W = x.extent(2);
  const std::size_t fy = H / h, fx = W / w;
  std::vector<double> out(H * W);
  const auto av = a.values();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t q = 0; q < W; ++q) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += std::abs(av[(k * h + r / fy) * w + q / fx]);
      out[r * W + q] = s / static_cast<double>(c);
    }
  return Tensor::constant({1, H, W}, std::move(out));
}

namespace {

std::tuple<std::size_t, std::size_t, std::size_t> planes(const Tensor& x, const char* op) {
  require(x.dim() == 2 || x.dim() == 3, std::string(op) + ": expected [H,W] or [C,H,W], got " + shape_str(x.shape()));
  if (x.dim() == 2) return {1, x.extent(0), x.extent(1)};
  return {x.extent(0), x.extent(1), x.extent(2)};
}

}  // namespace

Tensor rotate90(const Tensor& x) {
  const auto [c, h, w] = planes(x, "rotate90");
  std::vector<double> out(x.numel());
  const auto v = x.values();
  // Output plane is w x h.
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t r = 0; r < w; ++r)
      for (std::size_t q = 0; q < h; ++q) out[(k * w + r) * h + q] = v[(k * h + (h - 1 - q)) * w + r];
  Shape s = x.dim() == 2 ? Shape{w, h} : Shape{c, w, h};
  return Tensor::constant(std::move(s), std::move(out));
}

Tensor hflip(const Tensor& x) {
  const auto [c, h, w] = planes(x, "hflip");
  std::vector<double> out(x.numel());
  const auto v = x.values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) out[(k * h + r) * w + q] = v[(k * h + r) * w + (w - 1 - q)];
  return Tensor::constant(x.shape(), std::move(out));
}

pipeline::Mask saliency_mask(const Tensor& map, double percentile) {
  require(percentile > 0.0 && percentile < 100.0, "saliency_mask: percentile must lie in (0, 100)");
  const auto [c, h, w] = planes(map, "saliency_mask");
  require(c == 1, "saliency_mask: expected a single-channel map, got " + shape_str(map.shape()));
  require(all_finite(map.values()), "saliency_mask: map has non-finite values");
  std::vector<double> mag(map.numel());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(map.at(i));
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = std::min(sorted.size() - 1,
                            static_cast<std::size_t>(std::floor(percentile * static_cast<double>(sorted.size()) / 100.0)));
  const double thr = sorted[idx];
  pipeline::Mask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t i = 0; i < mag.size(); ++i) m.bits[i] = mag[i] >= thr ? 1 : 0;
  return m;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::inverting_gradients: return "inverting-gradients";
    case Method::fgsm: return "fgsm";
    case Method::feature_map: return "feature-map";
    case Method::gaussian_baseline: return "gaussian-baseline";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::inverting_gradients, Method::fgsm, Method::feature_map, Method::gaussian_baseline})
    if (s == to_string(m)) return m;
  throw ContractViolation("unknown noise method '" + s + "'");
}

Tensor SaliencyNoise::raw() const {
  std::vector<double> out(values.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values.at(i) * stddev + mean;
  return Tensor::constant(values.shape(), std::move(out));
}

SaliencyNoise make_noise(const Tensor& raw, Method method, bool standardize_values) {
  require(all_finite(raw.values()), "make_noise: non-finite values");
  SaliencyNoise n;
  n.method = method;
  n.standardized = standardize_values;
  if (standardize_values) {
    auto s = standardize(raw);
    n.values = s.image;
    n.mean = s.mean;
    n.stddev = s.stddev;
  } else {
    n.values = raw.detach();
  }
  return n;
}

SaliencyNoise gaussian_baseline(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  SaliencyNoise n = make_noise(rng.normal_tensor(shape), Method::gaussian_baseline, true);
  n.seed = seed;
  return n;
}

}  // namespace osn::noise
