#include <doctest.h>

#include <limits>

#include "sbmc/smc.hpp"
#include "support.hpp"

using namespace sbmc;
using namespace sbmc::testing;

namespace {

// Independent oracle: ESS of weights proportional to exp(h * ll).
double oracle_ess(const std::vector<double>& ll, double h) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : ll) top = std::max(top, h * x);
  double s1 = 0.0, s2 = 0.0;
  for (double x : ll) {
    const double w = std::exp(h * x - top);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

SmcConfig small_config(std::size_t n, std::uint64_t seed) {
  SmcConfig cfg;
  cfg.particles = n;
  cfg.seed = seed;
  cfg.kernel = HmcConfig{0.2, 3};
  return cfg;
}

}  // namespace

TEST_CASE("ESS examples") {
  CHECK(ess(std::vector<double>(10, 0.1)) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(ess(std::vector<double>{1.0, 0.0, 0.0, 0.0}) == 1.0);
  CHECK(ess(std::vector<double>{0.8, 0.2}) == doctest::Approx(1.0 / 0.68).epsilon(1e-14));
  CHECK_THROWS_AS(ess(std::vector<double>{0.5, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(ess(std::vector<double>{1.5, -0.5}), std::invalid_argument);
}

TEST_CASE("next_lambda: constant likelihood jumps to 1") {
  const std::vector<double> ll(16, -42.0);
  const auto s = next_lambda(ll, 0.0, 0.5);
  CHECK(s.lambda == 1.0);
  CHECK(s.ess == doctest::Approx(16.0));
}

TEST_CASE("next_lambda: two particles never fall below ESS 1") {
  // ESS(h) = (1 + e^{-hc})^2 / (1 + e^{-2hc}) >= 1 = rho N.
  for (double c : {1.0, 100.0, 1e4}) {
    const std::vector<double> ll{0.0, -c};
    CHECK(next_lambda(ll, 0.0, 0.5).lambda == 1.0);
  }
}

TEST_CASE("next_lambda agrees with a dense-grid scan") {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> ll(64);
    const double scale = std::exp(6.0 * uniform01(rng));
    for (double& x : ll) x = -scale * std::abs(standard_normal(rng));
    const double lambda = 0.5 * uniform01(rng);
    const auto s = next_lambda(ll, lambda, 0.5);
    const double h = s.lambda - lambda;
    REQUIRE(h > 0.0);
    if (s.lambda < 1.0) {
      CHECK(std::abs(oracle_ess(ll, h) - 32.0) <= 0.64);
      // First grid point below rho N brackets the bisection root.
      const std::size_t grid = 20000;
      double first_below = 1.0 - lambda;
      for (std::size_t k = 1; k <= grid; ++k) {
        const double g = (1.0 - lambda) * static_cast<double>(k) / grid;
        if (oracle_ess(ll, g) < 32.0) {
          first_below = g;
          break;
        }
      }
      CHECK(h <= first_below + 1e-12);
      // Bisection stops once the ESS is within 1e-3 N of the target.
      CHECK(oracle_ess(ll, h) >= 32.0);
      CHECK(oracle_ess(ll, h) <= 32.0 + 1e-3 * 64.0 + 1e-9);
    } else {
      CHECK(oracle_ess(ll, 1.0 - lambda) >= 32.0);
    }
  }
}

TEST_CASE("next_lambda names a non-finite particle") {
  std::vector<double> ll(8, -1.0);
  ll[5] = std::numeric_limits<double>::quiet_NaN();
  try {
    next_lambda(ll, 0.0, 0.5);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
}

TEST_CASE("systematic resampling") {
  Rng rng(2);
  SUBCASE("uniform weights keep every particle exactly once") {
    for (int rep = 0; rep < 20; ++rep) {
      auto idx = systematic_resample(std::vector<double>(17, 1.0 / 17), rng);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i = 0; i < 17; ++i) CHECK(idx[i] == i);
    }
  }
  SUBCASE("offspring counts are floor or ceil of N w and unbiased") {
    const std::vector<double> w{0.05, 0.3, 0.15, 0.4, 0.1};
    std::vector<double> mean(5, 0.0);
    const int reps = 20000;
    for (int rep = 0; rep < reps; ++rep) {
      std::vector<int> count(5, 0);
      for (auto i : systematic_resample(w, rng)) count[i]++;
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(count[i] >= static_cast<int>(std::floor(5 * w[i] - 1e-12)));
        CHECK(count[i] <= static_cast<int>(std::ceil(5 * w[i] + 1e-12)));
        mean[i] += static_cast<double>(count[i]) / reps;
      }
    }
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(mean[i] - 5 * w[i]) < 0.02);
  }
}

TEST_CASE("reweighting under a constant likelihood") {
  const double c = -7.25;
  const auto fam = TargetDensity(constant_likelihood(c, 2), GaussianPrior(1.0, 2));
  auto cfg = small_config(12, 3);
  KernelStats stats;
  auto ens = init_ensemble(fam, cfg, stats);
  const auto before = ens.particles;
  Rng rng(4);
  TemperSchedule sched;
  const double e = reweight_and_resample(ens, fam, 0.375, rng, sched);
  CHECK(ens.log_z == 0.375 * c);
  CHECK(e == doctest::Approx(12.0));
  CHECK(ens.lambda == 0.375);
  for (std::size_t i = 0; i < 12; ++i) CHECK(ens.particles[i].theta == before[i].theta);
}

TEST_CASE("reweighting stays finite at log-likelihoods near -1e4") {
  auto lik = std::make_shared<Likelihood>();
  lik->dim = 1;
  auto f = [](std::span<const double> th) { return -1e4 + th[0]; };
  lik->value = f;
  lik->value_and_grad = [f](std::span<const double> th, std::span<double> g) {
    g[0] = 1.0;
    return f(th);
  };
  const auto fam = TargetDensity(lik, GaussianPrior(1.0, 1));
  KernelStats stats;
  auto ens = init_ensemble(fam, small_config(32, 5), stats);
  Rng rng(6);
  TemperSchedule sched;
  reweight_and_resample(ens, fam, 1.0, rng, sched);
  CHECK(std::isfinite(ens.log_z));
  CHECK(ens.log_z == doctest::Approx(-1e4 + 0.5).epsilon(1e-4));
}

TEST_CASE("mutation stopping rule") {
  const auto t = TargetDensity(constant_likelihood(0.0, 3), GaussianPrior(1.0, 3));
  KernelStats stats;
  TemperSchedule sched;
  SUBCASE("infinite tolerance stops after two sweeps") {
    auto ens = init_ensemble(t, small_config(8, 7), stats);
    KernelConfig k = HmcConfig{0.3, 2};
    CHECK(mutate(ens, t, k, std::numeric_limits<double>::infinity(), 20, false, 1, stats, sched).sweeps == 2);
  }
  SUBCASE("a frozen kernel converges at two sweeps with zero displacement") {
    auto ens = init_ensemble(t, small_config(8, 8), stats);
    const auto before = ens.particles;
    KernelConfig k = HmcConfig{0.0, 1};
    const auto r = mutate(ens, t, k, 0.05, 20, false, 1, stats, sched);
    CHECK(r.sweeps == 2);
    CHECK(r.displacement == 0.0);
    for (std::size_t i = 0; i < 8; ++i) CHECK(ens.particles[i].theta == before[i].theta);
  }
  SUBCASE("independent prior draws keep the prior variance") {
    auto ens = init_ensemble(t, small_config(4000, 9), stats);
    KernelConfig k = PcnConfig{1.0};
    const auto r = mutate(ens, t, k, 0.05, 20, false, 1, stats, sched);
    CHECK(r.sweeps <= 20);
    CHECK(r.acceptance == 1.0);
    std::vector<double> x;
    for (const auto& p : ens.particles) x.push_back(p.theta[0]);
    CHECK(std::abs(sample_variance(x) - 1.0) < 0.1);
    // Distance between independent N(0, I_3) draws: E|x - y| = 2 Gamma(2) / Gamma(3/2).
    const double expect = 2.0 / std::tgamma(1.5);
    CHECK(std::abs(r.displacement - expect) < 0.1 * expect);
  }
}

TEST_CASE("constant-likelihood SMC run") {
  const double c = -3.0;
  const auto fam = TargetDensity(constant_likelihood(c, 1), GaussianPrior(2.0, 1));
  auto cfg = small_config(2000, 10);
  cfg.schedule = {1.0};
  const auto r = run_smc(fam, cfg);
  CHECK(r.log_z == doctest::Approx(c).epsilon(1e-14));
  CHECK(r.schedule.lambdas == std::vector<double>{0.0, 1.0});
  CHECK(!r.schedule.adaptive);
  std::vector<double> x;
  for (const auto& s : r.samples) x.push_back(s[0]);
  CHECK(std::abs(sample_mean(x)) < 0.15);
  CHECK(std::abs(sample_variance(x) / 2.0 - 1.0) < 0.1);
}

TEST_CASE("adaptive SMC on a conjugate Gaussian") {
  const ParamVector y{1.5, -0.8};
  const double tau2 = 0.05, v = 1.0;
  const auto fam = TargetDensity(gaussian_likelihood(y, tau2), GaussianPrior(v, 2));
  auto cfg = small_config(256, 11);
  const auto r = run_smc(fam, cfg);
  const auto& lam = r.schedule.lambdas;
  CHECK(lam.front() == 0.0);
  CHECK(lam.back() == 1.0);
  for (std::size_t j = 1; j < lam.size(); ++j) CHECK(lam[j] > lam[j - 1]);
  CHECK(lam.size() > 3);
  for (double e : std::vector<double>(r.schedule.ess.begin(), r.schedule.ess.end() - 1))
    CHECK(std::abs(e - 128.0) <= 2.56);
  const auto c = conjugate(tau2, v);
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> x;
    for (const auto& s : r.samples) x.push_back(s[j]);
    CHECK(std::abs(sample_mean(x) - c.mean_factor * y[j]) < 3.0 * std::sqrt(c.variance / 256.0) * 2.0);
  }
  const double logz = Conjugate::log_evidence(y[0], tau2, v) + Conjugate::log_evidence(y[1], tau2, v);
  CHECK(std::abs(r.log_z - logz) < 0.5);
  CHECK(r.epochs > 0.0);
}

TEST_CASE("SMC runs are a pure function of the seed") {
  const auto fam = TargetDensity(gaussian_likelihood({0.4, 0.1, -0.3}, 0.2), GaussianPrior(1.0, 3));
  auto cfg = small_config(24, 12);
  const auto a = run_smc(fam, cfg);
  cfg.threads = 4;
  const auto b = run_smc(fam, cfg);
  CHECK(a.samples == b.samples);
  CHECK(a.log_z == b.log_z);
  CHECK(a.schedule.lambdas == b.schedule.lambdas);
  cfg.seed = 13;
  CHECK(run_smc(fam, cfg).samples != a.samples);
}

TEST_CASE("SMC with pCN mutations") {
  const auto fam = TargetDensity(gaussian_likelihood({0.7}, 0.5), GaussianPrior(1.0, 1));
  auto cfg = small_config(500, 14);
  cfg.kernel = PcnConfig{0.5};
  const auto r = run_smc(fam, cfg);
  std::vector<double> x;
  for (const auto& s : r.samples) x.push_back(s[0]);
  const auto c = conjugate(0.5, 1.0);
  CHECK(std::abs(sample_mean(x) - c.mean_factor * 0.7) < 0.15);
  CHECK(std::abs(r.log_z - Conjugate::log_evidence(0.7, 0.5, 1.0)) < 0.2);
}

TEST_CASE("SMC configuration errors") {
  const auto fam = TargetDensity(constant_likelihood(0.0, 1), GaussianPrior(1.0, 1));
  auto cfg = small_config(1, 0);
  CHECK_THROWS_AS(run_smc(fam, cfg), std::invalid_argument);
  cfg = small_config(10, 0);
  cfg.schedule = {0.5, 0.4, 1.0};
  CHECK_THROWS_AS(run_smc(fam, cfg), std::invalid_argument);
  cfg.schedule = {0.5};
  CHECK_THROWS_AS(run_smc(fam, cfg), std::invalid_argument);
  cfg.schedule.clear();
  cfg.rho = 1.0;
  CHECK_THROWS_AS(run_smc(fam, cfg), std::invalid_argument);
}

TEST_CASE("S-MCMC chains") {
  const auto t = TargetDensity(gaussian_likelihood({0.5}, 0.5), GaussianPrior(1.0, 1));
  McmcConfig cfg;
  cfg.chains = 4;
  cfg.steps = 50;
  cfg.kernel = HmcConfig{0.3, 2};
  cfg.record_trace = true;
  const auto a = run_mcmc(t, cfg);
  CHECK(a.samples.size() == 4);
  CHECK(a.log_density_trace.size() == 4);
  CHECK(a.log_density_trace[0].size() == 50);
  CHECK(a.epochs > 0.0);
  cfg.threads = 3;
  CHECK(run_mcmc(t, cfg).samples == a.samples);
  cfg.average_trajectory = true;
  cfg.discard_fraction = 0.2;
  CHECK(run_mcmc(t, cfg).samples.size() == 4 * 40);
  cfg.discard_fraction = 1.0;
  CHECK_THROWS_AS(run_mcmc(t, cfg), std::invalid_argument);
}
