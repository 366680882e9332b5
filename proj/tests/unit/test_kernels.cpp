#include <doctest.h>

#include "sbmc/diagnostics.hpp"
#include "sbmc/kernels.hpp"
#include "support.hpp"

using namespace sbmc;
using namespace sbmc::testing;

namespace {

TargetDensity standard_gaussian(std::size_t d = 1) {
  return TargetDensity(constant_likelihood(0.0, d), GaussianPrior(1.0, d));
}

double hamiltonian(const TargetDensity& t, std::span<const double> th, std::span<const double> p) {
  return -t.log_density(th) + 0.5 * squared_norm(p);
}

struct Moments {
  double mean, var, se_mean;
};

Moments chain_moments(const std::vector<double>& x) {
  const double tau = iact(x);
  return {sample_mean(x), sample_variance(x),
          std::sqrt(sample_variance(x) * tau / static_cast<double>(x.size()))};
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS((HmcConfig{-1.0, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((HmcConfig{0.1, 0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((HmcConfig{0.0, 1}.validate()));
  CHECK_THROWS_AS((PcnConfig{0.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PcnConfig{1.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((SghmcConfig{0.1, -1.0, true}.validate()), std::invalid_argument);
}

TEST_CASE("leapfrog with a vanishing step leaves the state unchanged") {
  const auto t = standard_gaussian(3);
  const ParamVector th{0.5, -1.0, 2.0}, p{1.0, 0.3, -0.7};
  const auto r = leapfrog(t, th, p, 1e-12, 5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(r.theta[i] - th[i]) < 1e-9);
    CHECK(std::abs(r.momentum[i] - p[i]) < 1e-9);
  }
}

TEST_CASE("leapfrog energy error on a standard Gaussian") {
  const auto t = standard_gaussian();
  Rng rng(1);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const ParamVector th{standard_normal(rng)}, p{standard_normal(rng)};
    const auto r = leapfrog(t, th, p, 0.1, 10);
    worst = std::max(worst, std::abs(hamiltonian(t, r.theta, r.momentum) - hamiltonian(t, th, p)));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("leapfrog is reversible") {
  auto lik = gaussian_likelihood(random_vector(6, 2), 0.4);
  TargetDensity post(lik, GaussianPrior(0.5, 6));
  const auto t = make_anchored(post, random_vector(6, 3), 0.3).with_lambda(0.6);
  const auto th = random_vector(6, 4), p = random_vector(6, 5);
  const auto fwd = leapfrog(t, th, p, 0.05, 20);
  ParamVector back_p = fwd.momentum;
  for (double& x : back_p) x = -x;
  const auto back = leapfrog(t, fwd.theta, back_p, 0.05, 20);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(back.theta[i] - th[i]) < 1e-10);
    CHECK(std::abs(back.momentum[i] + p[i]) < 1e-10);
  }
  // 20 steps plus the initial gradient.
  CHECK(fwd.evaluations == 21);
}

TEST_CASE("HMC samples a standard Gaussian") {
  const auto t = standard_gaussian();
  ChainState s = make_state(t, ParamVector{0.0});
  Rng rng(6);
  KernelStats stats;
  std::vector<double> x;
  for (int i = 0; i < 50000; ++i) {
    hmc_step(t, s, HmcConfig{0.05, 5}, rng, stats);
    x.push_back(s.theta[0]);
  }
  const auto m = chain_moments(x);
  CHECK(std::abs(m.mean) < 0.05);
  CHECK(std::abs(m.var - 1.0) < 0.1);
  CHECK(stats.proposals == 50000);
}

TEST_CASE("HMC acceptance limits") {
  const auto t = TargetDensity(constant_likelihood(0.0, 4), GaussianPrior(0.5, 4)).with_lambda(0.0);
  SUBCASE("small steps are almost always accepted") {
    ChainState s = make_state(t, ParamVector(4, 0.1));
    Rng rng(7);
    KernelStats stats;
    for (int i = 0; i < 2000; ++i) hmc_step(t, s, HmcConfig{0.01, 1}, rng, stats);
    CHECK(stats.acceptance_rate() > 0.9);
  }
  SUBCASE("huge steps are rejected and the chain stays put") {
    const ParamVector start{0.3, -0.2, 0.1, 0.0};
    ChainState s = make_state(t, start);
    Rng rng(8);
    KernelStats stats;
    for (int i = 0; i < 200; ++i) hmc_step(t, s, HmcConfig{100.0, 1}, rng, stats);
    CHECK(stats.acceptance_rate() < 0.02);
    CHECK(stats.divergences > 150);
  }
}

TEST_CASE("pCN leaves the prior invariant with acceptance 1") {
  auto lik = gaussian_likelihood({0.5, 0.5}, 0.3);
  const auto t = TargetDensity(lik, GaussianPrior(2.0, 2)).with_lambda(0.0);
  ChainState s = make_state(t, ParamVector{0.0, 0.0});
  Rng rng(9);
  KernelStats stats;
  std::vector<double> x;
  for (int i = 0; i < 50000; ++i) {
    pcn_step(t, s, PcnConfig{0.5}, rng, stats);
    x.push_back(s.theta[1]);
  }
  CHECK(stats.acceptances == stats.proposals);
  CHECK(std::abs(sample_variance(x) / 2.0 - 1.0) < 0.05);
}

TEST_CASE("pCN with beta = 1 proposes independent prior draws") {
  const auto t = TargetDensity(constant_likelihood(0.0, 3), GaussianPrior(1.0, 3));
  ChainState a = make_state(t, ParamVector{5.0, 5.0, 5.0});
  ChainState b = make_state(t, ParamVector{-3.0, 1.0, 0.0});
  Rng ra(10), rb(10);
  KernelStats stats;
  pcn_step(t, a, PcnConfig{1.0}, ra, stats);
  pcn_step(t, b, PcnConfig{1.0}, rb, stats);
  CHECK(a.theta == b.theta);
}

TEST_CASE("pCN matches the conjugate Gaussian posterior") {
  const double y = 1.3, tau2 = 0.5, v = 2.0;
  const auto t = TargetDensity(gaussian_likelihood({y}, tau2), GaussianPrior(v, 1));
  const auto c = conjugate(tau2, v);
  ChainState s = make_state(t, ParamVector{0.0});
  Rng rng(11);
  KernelStats stats;
  std::vector<double> x;
  for (int i = 0; i < 50000; ++i) {
    pcn_step(t, s, PcnConfig{0.6}, rng, stats);
    x.push_back(s.theta[0]);
  }
  const auto m = chain_moments(x);
  CHECK(std::abs(m.mean - c.mean_factor * y) < 3.0 * m.se_mean);
  // Variance standard error from the squared deviations' chain.
  std::vector<double> sq;
  for (double v2 : x) sq.push_back((v2 - m.mean) * (v2 - m.mean));
  const auto ms = chain_moments(sq);
  CHECK(std::abs(m.var - c.variance) < 3.0 * ms.se_mean);
  CHECK(!s.grad_valid);
}

TEST_CASE("SGHMC limits") {
  const StochasticGradient g = [](std::span<const double> th, std::span<double> out, Rng&) {
    for (std::size_t i = 0; i < th.size(); ++i) out[i] = -th[i];
  };
  Rng rng(12);
  SUBCASE("zero step leaves theta unchanged") {
    SghmcState s{{0.4, -0.1}, {1.0, 2.0}};
    sghmc_step(g, s, SghmcConfig{0.0, 0.5, true}, rng);
    CHECK(s.theta == ParamVector{0.4, -0.1});
  }
  SUBCASE("no noise and no friction is a symplectic Euler step") {
    SghmcState s{{0.4, -0.1}, {1.0, 2.0}};
    const double e = 0.1;
    sghmc_step(g, s, SghmcConfig{e, 0.0, false}, rng);
    const double p0 = 1.0 + e * -0.4, p1 = 2.0 + e * 0.1;
    CHECK(s.momentum[0] == doctest::Approx(p0).epsilon(1e-15));
    CHECK(s.theta[0] == doctest::Approx(0.4 + e * p0).epsilon(1e-15));
    CHECK(s.theta[1] == doctest::Approx(-0.1 + e * p1).epsilon(1e-15));
  }
  SUBCASE("long run matches the target variance") {
    SghmcState s{{0.0}, {0.0}};
    std::vector<double> x;
    for (int i = 0; i < 400000; ++i) {
      sghmc_step(g, s, SghmcConfig{0.05, 1.0, true}, rng);
      if (i % 10 == 0) x.push_back(s.theta[0]);
    }
    CHECK(std::abs(sample_variance(x) - 1.0) < 0.15);
  }
}

TEST_CASE("step-size pilot lands the acceptance rate in band") {
  auto lik = gaussian_likelihood(random_vector(10, 13), 0.05);
  const auto t = TargetDensity(lik, GaussianPrior(1.0, 10));
  ChainState s = make_state(t, random_vector(10, 14, 0.1));
  Rng rng(15);
  KernelStats stats;
  const double eps = tune_step_size(t, s, HmcConfig{1.0, 3}, rng, stats, 50);
  KernelStats run;
  for (int i = 0; i < 2000; ++i) hmc_step(t, s, HmcConfig{eps, 3}, rng, run);
  CHECK(run.acceptance_rate() > 0.5);
  CHECK(run.acceptance_rate() < 0.97);
  CHECK(eps < 1.0);
}

TEST_CASE("retargeting reuses the cached likelihood") {
  std::size_t calls = 0;
  auto lik = gaussian_likelihood({0.2, 0.4}, 1.0);
  auto counted = std::make_shared<Likelihood>(*lik);
  counted->value_and_grad = [&calls, lik](std::span<const double> th, std::span<double> g) {
    ++calls;
    return lik->value_and_grad(th, g);
  };
  const auto fam = TargetDensity(counted, GaussianPrior(1.0, 2));
  ChainState s = make_state(fam.with_lambda(0.0), ParamVector{0.1, 0.3});
  CHECK(calls == 1);
  CHECK(retarget_state(fam.with_lambda(0.5), s) == 0);
  CHECK(calls == 1);
  CHECK(s.eval.log_density == doctest::Approx(fam.with_lambda(0.5).log_density(s.theta)).epsilon(1e-14));
}
