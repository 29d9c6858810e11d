#include <array>
#include <cmath>

#include "doctest.h"
#include "osn/autodiff.hpp"
#include "osn/nets.hpp"
#include "osn/ops.hpp"
#include "osn/random.hpp"
#include "../support/gradcheck.hpp"

using namespace osn;
using namespace osn::ad;
using namespace osn::nets;

namespace {

void set_param(ParamSet& ps, const std::string& name, double v) {
  for (std::size_t i = 0; i < ps.names().size(); ++i)
    if (ps.names()[i] == name)
      for (auto& x : ps.tensors()[i].mutable_values()) x = v;
}

// -log softmax(s)[y] computed without the engine.
double reference_ce(std::span<const double> s, std::size_t y) {
  double z = 0.0;
  for (double v : s) z += std::exp(v);
  return -std::log(std::exp(s[y]) / z);
}

}  // namespace

TEST_CASE("classifier construction") {
  const ClassifierArch arch;
  const auto a = Classifier::build(arch, 42);
  const auto b = Classifier::build(arch, 42);
  const auto c = Classifier::build(arch, 43);
  CHECK(a.params().flatten() == b.params().flatten());
  CHECK(a.params().flatten() != c.params().flatten());

  // Arch table: conv0 8x1x3x3 + 8, conv1 16x8x3x3 + 16, head 2x(16*6*6) + 2.
  const std::size_t expected = (8 * 1 * 9 + 8) + (16 * 8 * 9 + 16) + (2 * 16 * 6 * 6 + 2);
  CHECK(a.params().count() == expected);
  CHECK(a.params().count() < 200000);

  ClassifierArch bad;
  bad.input = {1, 22, 22};
  CHECK_THROWS_AS(Classifier::build(bad, 1), ContractViolation);
}

TEST_CASE("classifier loss") {
  auto clf = Classifier::build(ClassifierArch{}, 1);
  Rng rng(9);
  const Tensor x = rng.normal_tensor({1, 24, 24});

  SUBCASE("uniform scores give ln 2") {
    set_param(clf.params(), "head.weight", 0.0);
    set_param(clf.params(), "head.bias", 0.0);
    CHECK(classifier_loss(clf, x, 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("monotone in the true-class score") {
    set_param(clf.params(), "head.weight", 0.0);
    double prev = INFINITY;
    for (double s = -5.0; s <= 20.0; s += 1.0) {
      clf.params().tensors().back().mutable_values()[1] = s;
      const double l = classifier_loss(clf, x, 1).item();
      CHECK(l < prev);
      CHECK(l >= 0.0);
      prev = l;
    }
    CHECK(prev < 1e-8);
  }
  SUBCASE("matches a standalone cross-entropy") {
    for (std::size_t y : {0u, 1u}) {
      const Tensor s = clf.scores(x);
      CHECK(std::abs(classifier_loss(clf, x, y).item() - reference_ce(s.values(), y)) < 1e-10);
    }
  }
  CHECK_THROWS_AS(classifier_loss(clf, x, 2), ContractViolation);
  CHECK_THROWS_AS(classifier_loss(clf, rng.normal_tensor({1, 16, 16}), 0), ContractViolation);
}

TEST_CASE("param_gradient") {
  SUBCASE("toy quadratic closed form") {
    const QuadraticModel m({1.0, 2.0});
    const Tensor x = Tensor::constant({2}, {3.0, 4.0});
    CHECK(param_gradient(m, x, 0, false).vec() == std::vector<double>{33.0, 44.0});
  }
  SUBCASE("deterministic and matches per-parameter differences") {
    ClassifierArch arch;
    arch.input = {1, 8, 8};
    auto clf = Classifier::build(arch, 3);
    Rng rng(4);
    const Tensor x = rng.normal_tensor({1, 8, 8});
    const Tensor g = param_gradient(clf, x, 1, false);
    CHECK(g.vec() == param_gradient(clf, x, 1, false).vec());
    CHECK(g.numel() == clf.params().count());

    const auto theta = clf.params().flatten();
    auto f = [&](std::span<const double> th) {
      auto probe = clf.clone();
      probe.params().unflatten(th);
      return classifier_loss(probe, x, 1).item();
    };
    const auto fd = finite_diff_gradient(f, theta, 1e-5);
    CHECK(testing::rel_err(g.values(), fd) < 1e-5);
  }
}

TEST_CASE("param_gradient with carry-graph composes with gradient") {
  const QuadraticModel m({0.7, -1.3, 0.4});
  const Tensor target = Tensor::constant({3}, {2.0, -1.0, 0.5});
  auto objective = [&](const Tensor& x) {
    const Tensor g = param_gradient(m, x, 1, true);
    return sum(mul(mul(g, g), target));
  };
  const Tensor x0 = Tensor::constant({3}, {0.3, 0.8, -0.6});
  const Tensor x = Tensor::variable(x0);
  const Tensor gx = gradient(objective(x), x);
  const Tensor fd = finite_diff_gradient([&](const Tensor& v) { return objective(Tensor::variable(v)).item(); }, x0, 1e-5);
  CHECK(testing::rel_err(gx.values(), fd.values()) < 1e-5);
}

TEST_CASE("flatten/unflatten is a bijection") {
  auto clf = Classifier::build(ClassifierArch{}, 5);
  const auto before = clf.params().flatten();
  auto copy = Classifier::build(ClassifierArch{}, 6);
  copy.params().unflatten(before);
  for (std::size_t i = 0; i < clf.params().tensors().size(); ++i)
    CHECK(copy.params().tensors()[i].vec() == clf.params().tensors()[i].vec());
  CHECK_THROWS_AS(copy.params().unflatten(std::vector<double>(3)), ContractViolation);
}

TEST_CASE("train_classifier") {
  ClassifierArch arch;
  arch.input = {1, 1, 2};
  arch.channels = {};
  const std::array<double, 2> means{-1.5, 1.5};
  auto blobs = [&](std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = i % 2;
      out.push_back({Tensor::constant({1, 1, 2}, {means[y] + 0.6 * rng.normal(), means[y] + 0.6 * rng.normal()}), y});
    }
    return out;
  };
  const auto train = blobs(200, 1);
  const auto heldout = blobs(200, 2);

  // Bayes rule for equal isotropic covariances: nearest mean, i.e. sign of x0 + x1.
  std::size_t bayes_hits = 0;
  for (const auto& s : heldout) bayes_hits += ((s.image.at(0) + s.image.at(1) > 0.0) ? 1u : 0u) == s.label;
  REQUIRE(static_cast<double>(bayes_hits) / 200.0 >= 0.95);

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 7;
  const auto r = train_classifier(arch, train, heldout, cfg);
  CHECK(r.heldout_accuracy >= 0.95);
  CHECK(r.epoch_loss.size() == 20);

  const auto r2 = train_classifier(arch, train, heldout, cfg);
  CHECK(r.model.params().flatten() == r2.model.params().flatten());

  SUBCASE("memorizes a single point") {
    ClassifierArch conv;
    conv.input = {1, 8, 8};
    Rng rng(3);
    const std::vector<LabeledImage> one{{rng.normal_tensor({1, 8, 8}), 1}};
    TrainConfig c1;
    c1.epochs = 200;
    c1.batch_size = 1;
    c1.learning_rate = 1e-2;
    const auto m = train_classifier(conv, one, {}, c1);
    CHECK(classifier_loss(m.model, one[0].image, 1).item() < 0.01);
  }

  CHECK_THROWS_AS(train_classifier(arch, {}, {}, cfg), ContractViolation);
  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_classifier(arch, train, {}, bad), ContractViolation);
}

TEST_CASE("f32 runs keep parameters float-representable") {
  ClassifierArch arch;
  arch.input = {1, 8, 8};
  Rng rng(8);
  const std::vector<LabeledImage> data{{rng.normal_tensor({1, 8, 8}), 0}, {rng.normal_tensor({1, 8, 8}), 1}};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.precision = Precision::f32;
  const auto r = train_classifier(arch, data, {}, cfg);
  for (double v : r.model.params().flatten()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("denoiser contract") {
  DenoiserArch arch;
  const auto den = Denoiser::build(arch, 11);
  Rng rng(12);
  const Tensor x = rng.normal_tensor({1, 24, 24});
  const Tensor a = denoiser_predict(den, x, 17, 1);
  CHECK(a.shape() == x.shape());
  CHECK(all_finite(a.values()));
  CHECK(a.vec() == denoiser_predict(den, x, 17, 1).vec());
  for (std::size_t t : {std::size_t{1}, arch.timesteps})
    for (std::size_t c : {0u, 1u}) CHECK(all_finite(denoiser_predict(den, x, t, c).values()));

  DenoiserArch small = arch;
  small.image = {1, 16, 16};
  const auto den16 = Denoiser::build(small, 11);
  CHECK(denoiser_predict(den16, rng.normal_tensor({1, 16, 16}), 5, 0).shape() == Shape{1, 16, 16});

  CHECK_THROWS_AS(denoiser_predict(den, x, 0, 0), ContractViolation);
  CHECK_THROWS_AS(denoiser_predict(den, x, arch.timesteps + 1, 0), ContractViolation);
  CHECK_THROWS_AS(denoiser_predict(den, x, 3, 2), ContractViolation);
}

TEST_CASE("denoiser gradient matches differences on a small input") {
  DenoiserArch arch;
  arch.image = {1, 6, 6};
  arch.channels = 3;
  arch.dilations = {1, 2, 1};
  arch.time_dim = 4;
  arch.time_hidden = 5;
  auto den = Denoiser::build(arch, 2);
  Rng rng(1);
  const Tensor x = rng.normal_tensor({1, 6, 6});
  const Tensor probe = rng.normal_tensor({1, 6, 6});
  const Tensor loss = dot(den.predict(x, 4, 1), probe);
  const Tensor g = concat_flat(gradient(loss, den.params().tensors()));
  const auto theta = den.params().flatten();
  auto f = [&](std::span<const double> th) {
    auto d = den.clone();
    d.params().unflatten(th);
    return dot(d.predict(x, 4, 1), probe).item();
  };
  CHECK(testing::rel_err(g.values(), finite_diff_gradient(f, theta, 1e-5)) < 1e-5);
}

TEST_CASE("u-net denoiser") {
  DenoiserArch arch;
  arch.levels = 2;
  const auto den = Denoiser::build(arch, 11);
  // input conv, two per coarse level, one per decoder level, output conv
  std::size_t convs = 0;
  for (const auto& n : den.params().names()) convs += n.ends_with(".weight") && n.starts_with("conv");
  CHECK(convs == 1 + 2 * 2 + 2 + 1);
  CHECK(den.params().get("conv5.weight").shape() == Shape{32, 64, 3, 3});
  Rng rng(4);
  const Tensor x = rng.normal_tensor({1, 24, 24});
  const Tensor a = den.predict(x, 30, 0);
  CHECK(a.shape() == x.shape());
  CHECK(all_finite(a.values()));
  CHECK(a.vec() != den.predict(x, 30, 1).vec());

  DenoiserArch odd = arch;
  odd.image = {1, 6, 6};
  CHECK_THROWS_AS(Denoiser::build(odd, 1), ContractViolation);
  odd.levels = 1;
  CHECK_NOTHROW(Denoiser::build(odd, 1));

  DenoiserArch tiny;
  tiny.image = {1, 8, 8};
  tiny.levels = 2;
  tiny.channels = 2;
  tiny.time_dim = 4;
  tiny.time_hidden = 3;
  auto small = Denoiser::build(tiny, 6);
  const Tensor xs = rng.normal_tensor({1, 8, 8});
  const Tensor probe = rng.normal_tensor({1, 8, 8});
  const Tensor g = concat_flat(gradient(dot(small.predict(xs, 2, 1), probe), small.params().tensors()));
  auto f = [&](std::span<const double> th) {
    auto d = small.clone();
    d.params().unflatten(th);
    return dot(d.predict(xs, 2, 1), probe).item();
  };
  CHECK(testing::rel_err(g.values(), finite_diff_gradient(f, small.params().flatten(), 1e-5)) < 1e-5);
}

TEST_CASE("optimizers") {
  Tensor p = Tensor::variable({2}, {1.0, -1.0});
  std::vector<Tensor> ps{p};
  Optimizer sgd(OptimizerKind::sgd, 0.5);
  sgd.step(ps, std::vector<Tensor>{Tensor::constant({2}, {2.0, 4.0})});
  CHECK(p.vec() == std::vector<double>{0.0, -3.0});

  // First Adam step moves each coordinate by ~lr against the gradient sign.
  Tensor q = Tensor::variable({2}, {0.0, 0.0});
  std::vector<Tensor> qs{q};
  Optimizer adam(OptimizerKind::adam, 0.1);
  adam.step(qs, std::vector<Tensor>{Tensor::constant({2}, {3.0, -0.02})});
  CHECK(q.at(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(q.at(1) == doctest::Approx(0.1).epsilon(1e-5));
  CHECK_THROWS_AS(Optimizer(OptimizerKind::adam, 0.0), ContractViolation);
}
