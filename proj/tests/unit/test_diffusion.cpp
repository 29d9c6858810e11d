#include <cmath>

#include "doctest.h"
#include "osn/diffusion.hpp"
#include "osn/random.hpp"

using namespace osn;
using namespace osn::ad;
using namespace osn::diffusion;

namespace {

double sample_mean(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) s += e;
  return s / static_cast<double>(v.size());
}

double sample_var(std::span<const double> v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double e : v) s += (e - m) * (e - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("schedule examples") {
  const auto s = make_schedule(4, ScheduleKind::linear, 0.1, 0.4);
  REQUIRE(s.steps() == 4);
  const double beta[] = {0.1, 0.2, 0.3, 0.4};
  const double alpha[] = {0.9, 0.8, 0.7, 0.6};
  const double abar[] = {0.9, 0.72, 0.504, 0.3024};
  for (std::size_t t = 1; t <= 4; ++t) {
    CHECK(s.beta(t) == doctest::Approx(beta[t - 1]).epsilon(1e-14));
    CHECK(s.alpha(t) == doctest::Approx(alpha[t - 1]).epsilon(1e-14));
    CHECK(s.alpha_bar(t) == doctest::Approx(abar[t - 1]).epsilon(1e-14));
    CHECK(s.sigma(t) == doctest::Approx(std::sqrt(beta[t - 1])).epsilon(1e-14));
  }
  const auto one = make_schedule(1, ScheduleKind::linear, 0.05, 0.3);
  CHECK(one.alpha_bar(1) == doctest::Approx(0.95));
  CHECK(one.alpha(1) == doctest::Approx(0.95));

  CHECK_THROWS_AS(s.beta(0), ContractViolation);
  CHECK_THROWS_AS(s.beta(5), ContractViolation);
  CHECK_THROWS_AS(make_schedule(0, ScheduleKind::linear, 0.1, 0.2), ContractViolation);
  CHECK_THROWS_AS(make_schedule(10, ScheduleKind::linear, 0.0, 0.2), ContractViolation);
  CHECK_THROWS_AS(make_schedule(10, ScheduleKind::linear, 0.3, 0.2), ContractViolation);
  CHECK_THROWS_AS(make_schedule(10, ScheduleKind::linear, 0.1, 1.0), ContractViolation);
}

TEST_CASE("schedule algebra and the default endpoint") {
  const auto s = default_schedule();
  REQUIRE(s.steps() == 200);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 200; ++t) {
    CHECK(std::abs(s.alpha(t) - (1.0 - s.beta(t))) < 1e-12);
    prod *= s.alpha(t);
    CHECK(std::abs(s.alpha_bar(t) - prod) < 1e-12);
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.alpha_bar(200) < 0.05);

  // The shallower 1e-4 -> 0.02 ramp leaves about 13% of the signal at T = 200.
  const auto shallow = make_schedule(200, ScheduleKind::linear, 1e-4, 0.02);
  double p = 1.0;
  for (std::size_t i = 0; i < 200; ++i) p *= 1.0 - (1e-4 + (0.02 - 1e-4) * static_cast<double>(i) / 199.0);
  CHECK(shallow.alpha_bar(200) == doctest::Approx(p).epsilon(1e-12));
  CHECK(p > 0.13);
  CHECK(p < 0.135);
}

TEST_CASE("forward noising examples") {
  const auto s = NoiseSchedule::from_betas({0.36});  // alpha_bar_1 = 0.64
  Rng rng(1);
  const Tensor eps = rng.normal_tensor({5});
  const Tensor xt = forward_noise(Tensor::zeros({5}), 1, eps, s);
  for (std::size_t i = 0; i < 5; ++i) CHECK(xt.at(i) == doctest::Approx(0.6 * eps.at(i)).epsilon(1e-14));

  const auto q = NoiseSchedule::from_betas({0.75});  // alpha_bar_1 = 0.25
  const Tensor h = forward_noise(Tensor::ones({2, 2}), 1, Tensor::zeros({2, 2}), q);
  for (double v : h.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-14));

  // one Markov step at t = 1 agrees with the closed form
  const Tensor x0 = rng.normal_tensor({5});
  CHECK(forward_noise_step(x0, 1, eps, s).vec() == forward_noise(x0, 1, eps, s).vec());

  CHECK_THROWS_AS(forward_noise(Tensor::zeros({3}), 1, Tensor::zeros({4}), s), ContractViolation);
  CHECK_THROWS_AS(forward_noise(Tensor::zeros({3}), 2, Tensor::zeros({3}), s), ContractViolation);
}

TEST_CASE("marginal moments: closed form and sequential composition") {
  // Each of the 1e5 entries is an independent draw.
  const std::size_t n = 100000;
  const auto s = make_schedule(100, ScheduleKind::linear, 1e-4, 0.04);
  const double x0v = 0.7;
  const Tensor x0 = Tensor::full({n}, x0v);
  Rng rng(2024);
  for (std::size_t t : {1u, 10u, 50u, 100u}) {
    const double mu = std::sqrt(s.alpha_bar(t)) * x0v;
    const double var = 1.0 - s.alpha_bar(t);
    const double se = std::sqrt(var / static_cast<double>(n));

    const Tensor direct = forward_noise(x0, t, rng.normal_tensor({n}), s);
    CHECK(std::abs(sample_mean(direct.values()) - mu) < 4.0 * se);
    CHECK(std::abs(sample_var(direct.values()) / var - 1.0) < 0.05);

    Tensor x = x0;
    for (std::size_t k = 1; k <= t; ++k) x = forward_noise_step(x, k, rng.normal_tensor({n}), s);
    CHECK(std::abs(sample_mean(x.values()) - mu) < 4.0 * se);
    CHECK(std::abs(sample_var(x.values()) / var - 1.0) < 0.05);
  }
}

TEST_CASE("reverse step") {
  const auto s = NoiseSchedule::from_betas({0.19});
  const Tensor out = reverse_step(Tensor::ones({1}), 1, Tensor::ones({1}), Tensor::zeros({1}), s);
  CHECK(std::abs(out.item() - 0.62679) < 1e-5);
  CHECK(std::abs(out.item() - (1.0 - 0.19 / std::sqrt(0.19)) / 0.9) < 1e-9);

  CHECK_THROWS_AS(reverse_step(Tensor::ones({1}), 1, Tensor::ones({1}), Tensor::ones({1}), s), ContractViolation);

  // with noise at t > 1
  const auto s2 = NoiseSchedule::from_betas({0.1, 0.2});
  const Tensor r = reverse_step(Tensor::full({1}, 2.0), 2, Tensor::full({1}, 0.5), Tensor::full({1}, -1.0), s2);
  const double expect = (2.0 - 0.2 / std::sqrt(1.0 - 0.72) * 0.5) / std::sqrt(0.8) - std::sqrt(0.2);
  CHECK(r.item() == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("sampler with a zero predictor telescopes") {
  const auto s = default_schedule();
  const EpsPredictor zero = [](const Tensor& x, std::size_t, std::size_t) { return Tensor::zeros(x.shape()); };
  Rng rng(3);
  const Tensor xT = rng.normal_tensor({1, 6, 6});
  SampleOptions opts;
  opts.add_noise = false;
  const auto traj = sample_loop(zero, s, 0, xT, {1, 6, 6}, 11, opts);
  const double c = 1.0 / std::sqrt(s.alpha_bar(200));
  for (std::size_t i = 0; i < xT.numel(); ++i) {
    const double want = xT.at(i) * c;
    CHECK(std::abs(traj.final_image().at(i) - want) <= 1e-8 * std::abs(want));
  }
  CHECK(traj.states.front().first == 200);
  CHECK(traj.states.back().first == 0);
  CHECK(traj.states.size() == 2);
}

TEST_CASE("sampler determinism, snapshots and linearity in x_T") {
  const auto s = make_schedule(20, ScheduleKind::linear, 1e-3, 0.2);
  // An affine predictor keeps the whole chain affine in x_T.
  const EpsPredictor lin = [](const Tensor& x, std::size_t t, std::size_t c) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.3 * x.at(i) + 0.01 * static_cast<double>(t + c);
    return Tensor::constant(x.shape(), std::move(v));
  };
  SampleOptions opts;
  opts.snapshot_every = 5;
  const auto a = sample_loop(lin, s, 1, std::nullopt, {1, 4, 4}, 7, opts);
  const auto b = sample_loop(lin, s, 1, std::nullopt, {1, 4, 4}, 7, opts);
  CHECK(a.final_image().vec() == b.final_image().vec());
  std::vector<std::size_t> ts;
  for (const auto& st : a.states) ts.push_back(st.first);
  CHECK(ts == std::vector<std::size_t>{20, 15, 10, 5, 0});
  const auto c = sample_loop(lin, s, 1, std::nullopt, {1, 4, 4}, 8, opts);
  CHECK(a.final_image().vec() != c.final_image().vec());

  // Supplying x_T keeps the per-step noise stream: out(x1) - out(x2) is linear in x1 - x2.
  Rng rng(4);
  const Tensor x1 = rng.normal_tensor({1, 4, 4});
  const Tensor x2 = rng.normal_tensor({1, 4, 4});
  std::vector<double> mid(16);
  for (std::size_t i = 0; i < 16; ++i) mid[i] = 0.5 * (x1.at(i) + x2.at(i));
  const auto o1 = sample_loop(lin, s, 0, x1, {1, 4, 4}, 9).final_image();
  const auto o2 = sample_loop(lin, s, 0, x2, {1, 4, 4}, 9).final_image();
  const auto om = sample_loop(lin, s, 0, Tensor::constant({1, 4, 4}, mid), {1, 4, 4}, 9).final_image();
  for (std::size_t i = 0; i < 16; ++i) CHECK(om.at(i) == doctest::Approx(0.5 * (o1.at(i) + o2.at(i))).epsilon(1e-10));

  CHECK_THROWS_AS(sample_loop(lin, s, 0, Tensor::zeros({1, 3, 3}), {1, 4, 4}, 9), ContractViolation);
}

TEST_CASE("denoiser training lowers the epsilon error") {
  nets::DenoiserArch arch;
  arch.image = {1, 8, 8};
  arch.channels = 8;
  arch.dilations = {1, 2, 1};
  arch.time_dim = 8;
  arch.time_hidden = 16;
  arch.timesteps = 20;
  const auto s = make_schedule(20, ScheduleKind::linear, 1e-3, 0.3);

  std::vector<double> img(64, -1.0);
  for (std::size_t r = 2; r < 6; ++r)
    for (std::size_t c = 2; c < 6; ++c) img[r * 8 + c] = 1.0;
  std::vector<nets::LabeledImage> data(16, nets::LabeledImage{Tensor::constant({1, 8, 8}, img), 1});

  nets::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.seed = 5;
  const auto untrained = nets::Denoiser::build(arch, derive_seed(cfg.seed, 11));
  const double before = epsilon_mse(untrained, data, s, 77);
  const auto run = train_denoiser(data, s, arch, cfg);
  REQUIRE(run.epoch_mse.size() == 30);
  const double after = epsilon_mse(run.model, data, s, 77);
  CHECK(after < 0.5 * before);
  CHECK(run.epoch_mse.back() < run.epoch_mse.front());

  const auto again = train_denoiser(data, s, arch, cfg);
  CHECK(again.model.params().flatten() == run.model.params().flatten());

  // the schedule and the denoiser must agree on T
  CHECK_THROWS_AS(sample_loop(run.model, default_schedule(), 0, std::nullopt, 1), ContractViolation);
  const auto smp = sample_loop(run.model, s, 1, std::nullopt, 3);
  CHECK(smp.final_image().shape() == Shape{1, 8, 8});
  CHECK(all_finite(smp.final_image().values()));
}
