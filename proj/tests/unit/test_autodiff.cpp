#include <cmath>
#include <random>

#include "doctest.h"
#include "osn/autodiff.hpp"
#include "osn/ops.hpp"
#include "../support/gradcheck.hpp"

using namespace osn;
using namespace osn::ad;

namespace {
Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::constant({n}, std::move(v));
}
Tensor var(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::variable({n}, std::move(v));
}
}  // namespace

TEST_CASE("op examples") {
  CHECK(dot(vec({1, 2, 3}), vec({4, 5, 6})).item() == 32.0);
  const Tensor r = relu(vec({-1, 0, 2}));
  CHECK(r.vec() == std::vector<double>{0, 0, 2});
  CHECK(l2_norm(vec({3, 4})).item() == 5.0);
  CHECK(softmax_cross_entropy(vec({0.7, 0.7}), 1).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("shape mismatch names both shapes") {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ContractViolation);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 5, 5}), Tensor::zeros({1, 1, 3, 3}), ConvSpec::valid()),
                  ContractViolation);
  CHECK_THROWS_AS(softmax_cross_entropy(vec({1, 2}), 2), ContractViolation);
  CHECK_THROWS_AS(embed_lookup(Tensor::zeros({2, 3}), 2), ContractViolation);
}

TEST_CASE("first and second order examples") {
  const Tensor x = var({1, 2, 3});
  CHECK(gradient(sum(mul(x, x)), x).vec() == std::vector<double>{2, 4, 6});

  const Tensor y = var({1, 2});
  const Tensor cube = sum(mul(mul(y, y), y));
  const Tensor g = gradient(cube, y, true);
  CHECK(g.recorded());
  CHECK(g.vec() == std::vector<double>{3, 12});
  const Tensor gg = gradient(sum(g), y);
  CHECK(gg.at(0) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(gg.at(1) == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("gradient contract") {
  const Tensor x = var({1, 2});
  CHECK_THROWS_AS(gradient(mul(x, x), x), ContractViolation);  // not 0-d
  const Tensor unrelated = var({5, 5, 5});
  const auto gs = gradient(sum(x), std::vector<Tensor>{x, unrelated});
  CHECK(gs[1].vec() == std::vector<double>{0, 0, 0});
  // Without carry-graph the result is a plain constant.
  CHECK_FALSE(gs[0].recorded());
  // Targets must be leaves.
  const Tensor mid = mul(x, x);
  CHECK_THROWS_AS(gradient(sum(mid), mid), ContractViolation);
}

TEST_CASE("undefined points: relu at 0 and l2-norm at 0") {
  const Tensor x = var({0.0, -1.0, 2.0});
  CHECK(gradient(sum(relu(x)), x).vec() == std::vector<double>{0, 0, 1});
  const Tensor z = var({0.0, 0.0});
  CHECK(gradient(l2_norm(z), z).vec() == std::vector<double>{0, 0});
}

TEST_CASE("conv2d gradient matches central differences") {
  std::mt19937_64 rng(7);
  const Tensor x0 = testing::random_tensor(rng, {1, 4, 4});
  const Tensor w = testing::random_tensor(rng, {2, 1, 3, 3});
  for (ConvSpec spec : {ConvSpec::valid(), ConvSpec::same(3)}) {
    const Tensor x = Tensor::variable(x0);
    const Tensor g = gradient(sum(conv2d(x, w, spec)), x);
    const Tensor fd = finite_diff_gradient([&](const Tensor& v) { return sum(conv2d(v, w, spec)).item(); }, x0, 1e-4);
    CHECK(testing::rel_err(g.values(), fd.values()) < 1e-6);
  }
}

TEST_CASE("finite_diff_gradient") {
  const Tensor x = vec({3.0});
  const Tensor fd = finite_diff_gradient([](const Tensor& v) { return sum(mul(v, v)).item(); }, x, 1e-5);
  CHECK(std::abs(fd.item() - 6.0) < 1e-8);
  const Tensor c = finite_diff_gradient([](const Tensor&) { return 4.2; }, vec({1, 2, 3}), 1e-3);
  CHECK(c.vec() == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(finite_diff_gradient([](const Tensor&) { return 1.0; }, x, 0.0), ContractViolation);
  CHECK_THROWS_AS(finite_diff_gradient([](const Tensor&) { return NAN; }, x, 1e-3), ContractViolation);
}

TEST_CASE("every op kind: first-order gradient vs central differences") {
  std::mt19937_64 rng(2024);
  for (OpKind k : kAllOpKinds) {
    CAPTURE(to_string(k));
    for (int trial = 0; trial < 20; ++trial) {
      const auto oc = testing::random_case(k, rng);
      CHECK(testing::check_op_gradient(oc, rng) < 1e-5);
    }
  }
}

TEST_CASE("linearity of gradient") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x0 = testing::random_tensor(rng, {3, 3});
    const Tensor w = testing::random_tensor(rng, {3, 3});
    const double a = std::normal_distribution<double>()(rng);
    const double b = std::normal_distribution<double>()(rng);
    const Tensor x = Tensor::variable(x0);
    auto f = [&] { return sum(mul(mul(x, x), w)); };
    auto g = [&] { return l2_norm(matmul(x, w)); };
    const Tensor combined = gradient(add(scale(f(), a), scale(g(), b)), x);
    const Tensor gf = gradient(f(), x);
    const Tensor gg = gradient(g(), x);
    for (std::size_t i = 0; i < x0.numel(); ++i)
      CHECK(std::abs(combined.at(i) - (a * gf.at(i) + b * gg.at(i))) < 1e-10);
  }
}

TEST_CASE("second-order through every bilinear family member") {
  // d/dx of ||d/dw <conv(x, w), r>||^2 against differences of the inner gradient.
  std::mt19937_64 rng(5);
  const Tensor x0 = testing::random_tensor(rng, {2, 5, 5});
  const Tensor w0 = testing::random_tensor(rng, {3, 2, 3, 3});
  const Tensor probe = testing::random_tensor(rng, {3, 5, 5});
  const ConvSpec spec = ConvSpec::same(3);
  auto objective = [&](const Tensor& xv, bool carry) {
    const Tensor x = Tensor::variable(xv);
    const Tensor w = Tensor::variable(w0);
    const Tensor inner = dot(relu(conv2d(x, w, spec)), probe);
    const Tensor gw = gradient(inner, w, carry);
    return std::pair{x, sum(mul(gw, gw))};
  };
  auto [x, obj] = objective(x0, true);
  const Tensor g = gradient(obj, x);
  const Tensor fd = finite_diff_gradient([&](const Tensor& v) { return objective(v, false).second.item(); }, x0, 1e-5);
  CHECK(testing::rel_err(g.values(), fd.values()) < 1e-5);
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(3);
  const Tensor x0 = testing::random_tensor(rng, {1, 6, 6});
  const Tensor w = testing::random_tensor(rng, {4, 1, 3, 3});
  auto run = [&] {
    const Tensor x = Tensor::variable(x0);
    return gradient(l2_norm(relu(conv2d(x, w, ConvSpec::same(3)))), x).vec();
  };
  CHECK(run() == run());
}
