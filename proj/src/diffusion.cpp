#include "osn/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "osn/autodiff.hpp"
#include "osn/ops.hpp"
#include "osn/random.hpp"

namespace osn::diffusion {

using namespace osn::ad;

std::size_t NoiseSchedule::index(std::size_t t) const {
  require(t >= 1 && t <= beta_.size(),
          "timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
  return t - 1;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  require(!betas.empty(), "schedule needs at least one step");
  NoiseSchedule s;
  double prod = 1.0;
  for (double b : betas) {
    require(b > 0.0 && b < 1.0, "schedule beta must lie in (0, 1), got " + std::to_string(b));
    s.alpha_.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar_.push_back(prod);
    s.sigma_.push_back(std::sqrt(b));
  }
  s.beta_ = std::move(betas);
  return s;
}

NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind, double beta_min, double beta_max) {
  require(steps >= 1, "schedule needs T >= 1");
  require(kind == ScheduleKind::linear, "unsupported schedule kind");
  require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
          "schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_min + (beta_max - beta_min) * f;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

NoiseSchedule default_schedule() { return make_schedule(200, ScheduleKind::linear, 1e-4, 0.04); }

namespace {

void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor affine(const Tensor& a, double ca, const Tensor& b, double cb) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * av[i] + cb * bv[i];
  return Tensor::constant(a.shape(), std::move(out));
}

}  // namespace

Tensor forward_noise_step(const Tensor& x_prev, std::size_t t, const Tensor& z, const NoiseSchedule& sched) {
  same_shape("forward_noise_step", x_prev, z);
  const double b = sched.beta(t);
  return affine(x_prev, std::sqrt(1.0 - b), z, std::sqrt(b));
}

Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  same_shape("forward_noise", x0, eps);
  const double ab = sched.alpha_bar(t);
  return affine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor reverse_step(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const Tensor& z,
                    const NoiseSchedule& sched) {
  same_shape("reverse_step", x_t, eps_hat);
  same_shape("reverse_step", x_t, z);
  const double a = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  if (t == 1)
    require(std::all_of(z.values().begin(), z.values().end(), [](double v) { return v == 0.0; }),
            "reverse_step: the final step (t = 1) takes z = 0");
  const double inv = 1.0 / std::sqrt(a);
  const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
  const double sig = sched.sigma(t);
  std::vector<double> out(x_t.numel());
  const auto xv = x_t.values();
  const auto ev = eps_hat.values();
  const auto zv = z.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv * (xv[i] - coef * ev[i]) + sig * zv[i];
  return Tensor::constant(x_t.shape(), std::move(out));
}

Trajectory sample_loop(const EpsPredictor& predictor, const NoiseSchedule& sched, std::size_t c,
                       const std::optional<Tensor>& x_T, const Shape& image_shape, std::uint64_t seed,
                       const SampleOptions& opts) {
  NoRecordGuard guard;
  Tensor x;
  if (x_T) {
    require(x_T->shape() == image_shape,
            "sample_loop: supplied x_T shape mismatch " + shape_str(x_T->shape()) + " vs " + shape_str(image_shape));
    x = x_T->detach();
  } else {
    Rng init(derive_seed(seed, 0));
    x = init.normal_tensor(image_shape);
  }
  Rng steps(derive_seed(seed, 1));
  const std::size_t T = sched.steps();
  Trajectory traj;
  traj.seed = seed;
  traj.class_id = c;
  traj.noise_source = opts.noise_source;
  traj.states.emplace_back(T, x);
  const Tensor zero = Tensor::zeros(image_shape);
  for (std::size_t t = T; t >= 1; --t) {
    const Tensor eps_hat = predictor(x, t, c);
    Tensor z = zero;
    if (t > 1 && opts.add_noise) z = steps.normal_tensor(image_shape);
    x = reverse_step(x, t, eps_hat, z, sched);
    const std::size_t next = t - 1;
    if (next == 0 || (opts.snapshot_every > 0 && next % opts.snapshot_every == 0)) traj.states.emplace_back(next, x);
  }
  return traj;
}

Trajectory sample_loop(const nets::Denoiser& den, const NoiseSchedule& sched, std::size_t c,
                       const std::optional<Tensor>& x_T, std::uint64_t seed, const SampleOptions& opts) {
  require(den.arch().timesteps == sched.steps(), "sample_loop: denoiser trained for a different T");
  auto predict = [&den](const Tensor& x, std::size_t t, std::size_t cls) { return den.predict(x, t, cls); };
  return sample_loop(predict, sched, c, x_T, den.arch().image, seed, opts);
}

DenoiserTraining train_denoiser(std::span<const nets::LabeledImage> data, const NoiseSchedule& sched,
                                const nets::DenoiserArch& arch, const nets::TrainConfig& cfg,
                                const std::function<void(std::size_t, double)>& on_epoch) {
  cfg.validate();
  require(!data.empty(), "train_denoiser: empty dataset");
  require(arch.timesteps == sched.steps(), "train_denoiser: arch timesteps differ from the schedule");
  for (const auto& s : data) {
    require(s.image.shape() == arch.image, "train_denoiser: image shape " + shape_str(s.image.shape()) +
                                               " does not match denoiser input " + shape_str(arch.image));
    require(s.label < arch.num_classes, "train_denoiser: label out of range");
  }

  DenoiserTraining out{nets::Denoiser::build(arch, derive_seed(cfg.seed, 11)), {}};
  auto& den = out.model;
  den.params().round_to(cfg.precision);
  nets::Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, 12));
  Rng noise(derive_seed(cfg.seed, 13));
  const double inv_pixels = 1.0 / static_cast<double>(numel_of(arch.image));
  std::vector<double> ema = den.params().flatten();
  std::size_t updates = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = data[order[i]];
        const std::size_t t = noise.uniform_int(1, sched.steps());
        const Tensor eps = noise.normal_tensor(arch.image);
        const Tensor x_t = forward_noise(s.image, t, eps, sched);
        const Tensor diff = sub(den.predict(x_t, t, s.label), eps);
        const Tensor mse = scale(dot(diff, diff), inv_pixels);
        batch = batch.defined() ? add(batch, mse) : mse;
      }
      total += batch.item();
      const Tensor loss = scale(batch, 1.0 / static_cast<double>(end - start));
      const auto grads = gradient(loss, den.params().tensors());
      opt.step(den.params().tensors(), grads);
      den.params().round_to(cfg.precision);
      if (cfg.ema_decay > 0.0) {
        const double d = std::min(cfg.ema_decay, (1.0 + updates) / (10.0 + updates));
        const auto cur = den.params().flatten();
        for (std::size_t j = 0; j < ema.size(); ++j) ema[j] = d * ema[j] + (1.0 - d) * cur[j];
        ++updates;
      }
    }
    out.epoch_mse.push_back(total / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch, out.epoch_mse.back());
  }
  if (cfg.ema_decay > 0.0) {
    den.params().unflatten(ema);
    den.params().round_to(cfg.precision);
  }
  return out;
}

double epsilon_mse(const nets::Denoiser& den, std::span<const nets::LabeledImage> data, const NoiseSchedule& sched,
                   std::uint64_t seed) {
  require(!data.empty(), "epsilon_mse: empty dataset");
  NoRecordGuard guard;
  Rng rng(seed);
  double total = 0.0;
  for (const auto& s : data) {
    const std::size_t t = rng.uniform_int(1, sched.steps());
    const Tensor eps = rng.normal_tensor(s.image.shape());
    const Tensor diff = sub(den.predict(forward_noise(s.image, t, eps, sched), t, s.label), eps);
    total += dot(diff, diff).item() / static_cast<double>(diff.numel());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace osn::diffusion
