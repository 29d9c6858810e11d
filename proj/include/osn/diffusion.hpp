#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osn/nets.hpp"
#include "osn/tensor.hpp"

namespace osn::diffusion {

using ad::Tensor;

enum class ScheduleKind { linear };

// beta, alpha = 1 - beta, alpha_bar = running product, sigma = sqrt(beta),
// all indexed by timestep t in [1, T].
class NoiseSchedule {
 public:
  std::size_t steps() const { return beta_.size(); }
  double beta(std::size_t t) const { return beta_[index(t)]; }
  double alpha(std::size_t t) const { return alpha_[index(t)]; }
  double alpha_bar(std::size_t t) const { return alpha_bar_[index(t)]; }
  double sigma(std::size_t t) const { return sigma_[index(t)]; }

  static NoiseSchedule from_betas(std::vector<double> betas);

 private:
  std::size_t index(std::size_t t) const;
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind, double beta_min, double beta_max);
// T = 200, beta linear from 1e-4 to 0.04 (alpha_bar_T about 0.017).
NoiseSchedule default_schedule();

// One Markov step: sqrt(1 - beta_t) x_prev + sqrt(beta_t) z.
Tensor forward_noise_step(const Tensor& x_prev, std::size_t t, const Tensor& z, const NoiseSchedule& sched);
// Closed-form marginal: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);
// (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t) + sigma_t z.
// z must be all zeros at t = 1.
Tensor reverse_step(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const Tensor& z,
                    const NoiseSchedule& sched);

struct Trajectory {
  std::vector<std::pair<std::size_t, Tensor>> states;  // strictly decreasing t, ending at 0
  std::uint64_t seed = 0;
  std::size_t class_id = 0;
  std::string noise_source;

  const Tensor& final_image() const { return states.back().second; }
};

using EpsPredictor = std::function<Tensor(const Tensor& x_t, std::size_t t, std::size_t c)>;

struct SampleOptions {
  // Keep x_t for every t divisible by this (0: only x_T and x_0).
  std::size_t snapshot_every = 0;
  bool add_noise = true;  // false forces z = 0 at every step
  std::string noise_source = "gaussian";
};

// Runs reverse_step from T down to 1. x_T, when absent, is drawn from the seed;
// the per-step z draws use a separate stream of the same seed, so supplying
// x_T does not change them.
Trajectory sample_loop(const EpsPredictor& predictor, const NoiseSchedule& sched, std::size_t c,
                       const std::optional<Tensor>& x_T, const ad::Shape& image_shape, std::uint64_t seed,
                       const SampleOptions& opts = {});
Trajectory sample_loop(const nets::Denoiser& den, const NoiseSchedule& sched, std::size_t c,
                       const std::optional<Tensor>& x_T, std::uint64_t seed, const SampleOptions& opts = {});

struct DenoiserTraining {
  nets::Denoiser model;
  std::vector<double> epoch_mse;
};

// Epsilon-prediction objective: mean squared error between the injected unit
// Gaussian noise and the prediction at t drawn uniformly from [1, T].
DenoiserTraining train_denoiser(std::span<const nets::LabeledImage> data, const NoiseSchedule& sched,
                                const nets::DenoiserArch& arch, const nets::TrainConfig& cfg,
                                const std::function<void(std::size_t, double)>& on_epoch = {});

// Mean epsilon-MSE of a model over the data at seeded timesteps and noise.
double epsilon_mse(const nets::Denoiser& den, std::span<const nets::LabeledImage> data, const NoiseSchedule& sched,
                   std::uint64_t seed);

}  // namespace osn::diffusion
