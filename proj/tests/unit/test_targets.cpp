#include <doctest.h>

#include <atomic>
#include <set>

#include "sbmc/targets.hpp"
#include "support.hpp"

using namespace sbmc;
using namespace sbmc::testing;

TEST_CASE("derive_seed gives distinct streams per (island, particle)") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t p = 0; p < 16; ++p)
    for (std::uint64_t i = 0; i < 64; ++i) seen.insert(derive_seed(42, p, i));
  CHECK(seen.size() == 16 * 64);
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("log-domain helpers stay finite at large magnitudes") {
  const std::vector<double> x{-1e4, -1e4 + std::log(3.0)};
  CHECK(log_sum_exp(x) == doctest::Approx(-1e4 + std::log(4.0)).epsilon(1e-14));
  CHECK(log_mean_exp(x) == doctest::Approx(-1e4 + std::log(2.0)).epsilon(1e-14));
  const auto w = normalize_log_weights(x);
  CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-12));
  const std::vector<double> big{1e4, 1e4};
  CHECK(log_sum_exp(big) == doctest::Approx(1e4 + std::log(2.0)));
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 30) throw std::runtime_error("index " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "index 7");
  }
}

TEST_CASE("anchored prior at its mean with lambda = 0 is a pure Gaussian") {
  auto lik = gaussian_likelihood({0.3, -0.2}, 1.0);
  TargetDensity post(lik, GaussianPrior(0.1, 2));
  const ParamVector map{0.5, -1.5};
  const auto t = make_anchored(post, map, 0.1).with_lambda(0.0);
  const double expect = -std::log(2.0 * std::numbers::pi * 0.01);
  CHECK(std::abs(t.log_density(map) - expect) < 1e-12);
  for (double g : t.grad_log_density(map)) CHECK(g == 0.0);
}

TEST_CASE("anchor scale s = 1 recovers the posterior") {
  auto lik = gaussian_likelihood(random_vector(5, 1), 0.7);
  TargetDensity post(lik, GaussianPrior(0.1, 5));
  const auto t = make_anchored(post, random_vector(5, 2), 1.0);
  for (int k = 0; k < 100; ++k) {
    const auto th = random_vector(5, 100 + k);
    CHECK(std::abs(t.log_density(th) - post.log_density(th)) < 1e-12);
  }
}

TEST_CASE("anchored prior mean and variance follow the indicator rule") {
  auto lik = constant_likelihood(0.0, 3);
  TargetDensity post(lik, GaussianPrior(0.1, 3));
  const ParamVector map{1.0, 2.0, 3.0};
  const auto a = std::get<AnchoredPrior>(make_anchored(post, map, 0.1).prior());
  CHECK(a.alpha() == 1.0);
  CHECK(a.variance() == doctest::Approx(0.01));
  CHECK(a.mean(2) == 3.0);
  const auto b = std::get<AnchoredPrior>(make_anchored(post, map, 0.6).prior());
  CHECK(b.alpha() == 0.0);
  CHECK(b.mean(1) == 0.0);
  CHECK(b.variance() == doctest::Approx(0.06));
  CHECK_THROWS_AS(make_anchored(post, map, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(make_anchored(post, ParamVector{1.0}, 0.1), std::invalid_argument);
}

TEST_CASE("constant likelihood adds a constant") {
  auto lik = constant_likelihood(-3.5, 4);
  TargetDensity t(lik, GaussianPrior(2.0, 4));
  const auto th = random_vector(4, 3);
  CHECK(t.log_density(th) == doctest::Approx(-3.5 + prior_log_density(t.prior(), th)).epsilon(1e-14));
}

TEST_CASE("target gradient matches central differences") {
  auto lik = gaussian_likelihood(random_vector(6, 4), 0.5);
  TargetDensity post(lik, GaussianPrior(0.3, 6));
  const auto t = make_anchored(post, random_vector(6, 5), 0.2).with_lambda(0.7);
  const auto th = random_vector(6, 6);
  const auto g = t.grad_log_density(th);
  const auto fd = fd_gradient([&](std::span<const double> x) { return t.log_density(x); }, th, 1e-5);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(g[i] - fd[i]) <= 1e-5 * std::max(1.0, std::abs(fd[i])));
}

TEST_CASE("quadratic likelihood gradient matches the hand formula") {
  // l = -|theta|^2 / 2 with prior N(0, v): grad = -theta - theta / v.
  auto lik = std::make_shared<Likelihood>();
  lik->dim = 3;
  lik->value = [](std::span<const double> th) { return -0.5 * squared_norm(th); };
  lik->value_and_grad = [](std::span<const double> th, std::span<double> g) {
    for (std::size_t i = 0; i < th.size(); ++i) g[i] = -th[i];
    return -0.5 * squared_norm(th);
  };
  const double v = 0.5;
  TargetDensity t(lik, GaussianPrior(v, 3));
  const ParamVector th{0.3, -1.0, 2.0};
  const auto g = t.grad_log_density(th);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(-th[i] * (1.0 + 1.0 / v)));
}

TEST_CASE("cold posterior") {
  auto lik = gaussian_likelihood({0.4}, 1.0);
  TargetDensity post(lik, GaussianPrior(1.0, 1));
  SUBCASE("T = 1 is the identity") {
    const auto c = make_cold(post, 1.0);
    for (double x : {-2.0, 0.0, 0.7}) CHECK(c.log_density(ParamVector{x}) == post.log_density(ParamVector{x}));
  }
  SUBCASE("T = 0.5 scales a Gaussian posterior's variance by T") {
    // Posterior N(0.2, 0.5); the cold density's curvature is -1 / (T sigma^2).
    const auto c = make_cold(post, 0.5);
    const double h = 1e-3;
    const auto f = [&](double x) { return c.log_density(ParamVector{x}); };
    const double curv = (f(0.2 + h) - 2 * f(0.2) + f(0.2 - h)) / (h * h);
    CHECK(curv == doctest::Approx(-1.0 / (0.5 * 0.5)).epsilon(1e-6));
    CHECK(c.grad_log_density(ParamVector{0.2})[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("T = 2 halves the log-density") {
    auto k = constant_likelihood(-6.0, 2);
    TargetDensity t(k, GaussianPrior(1.0, 2));
    const auto c = make_cold(t, 2.0);
    const auto th = random_vector(2, 9);
    CHECK(c.log_density(th) == doctest::Approx(0.5 * t.log_density(th)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(make_cold(post, 0.0), std::invalid_argument);
}

TEST_CASE("evaluate_all and combine agree with evaluate") {
  auto lik = gaussian_likelihood(random_vector(4, 11), 0.8);
  TargetDensity post(lik, GaussianPrior(0.5, 4));
  const auto t = make_cold(make_anchored(post, random_vector(4, 12), 0.3), 0.7).with_lambda(0.4);
  const auto th = random_vector(4, 13);
  ParamVector g1(4), g2(4), gl(4), g3(4);
  const auto e1 = t.evaluate(th, g1);
  const auto e2 = t.evaluate_all(th, g2, gl);
  const auto e3 = t.combine(th, e2.log_likelihood, gl, g3);
  CHECK(e1.log_density == doctest::Approx(e2.log_density).epsilon(1e-14));
  CHECK(e3.log_density == doctest::Approx(e2.log_density).epsilon(1e-14));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-14));
    CHECK(g3[i] == doctest::Approx(g2[i]).epsilon(1e-14));
  }
}

TEST_CASE("non-finite likelihood raises NonFiniteError") {
  auto lik = constant_likelihood(std::numeric_limits<double>::quiet_NaN(), 2);
  TargetDensity t(lik, GaussianPrior(1.0, 2));
  CHECK_THROWS_AS(t.log_density(ParamVector{0.0, 0.0}), NonFiniteError);
  CHECK_THROWS_AS(t.log_density(ParamVector{0.0}), std::invalid_argument);
}
