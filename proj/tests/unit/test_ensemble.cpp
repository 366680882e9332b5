#include <doctest.h>

#include "sbmc/ensemble.hpp"
#include "support.hpp"

using namespace sbmc;
using namespace sbmc::testing;

namespace {

RunResult island(std::size_t p, double log_z, std::vector<ParamVector> samples) {
  RunResult r;
  r.island = p;
  r.log_z = log_z;
  r.samples = std::move(samples);
  return r;
}

const Functional identity = [](std::span<const double> th) {
  return std::vector<double>(th.begin(), th.end());
};

}  // namespace

TEST_CASE("island weights survive log Z near -1e4") {
  const std::vector<double> lz{-1e4, -1e4 + std::log(3.0)};
  const auto w = island_weights(lz);
  CHECK(std::abs(w.weights[0] - 0.25) < 1e-10);
  CHECK(std::abs(w.weights[1] - 0.75) < 1e-10);
  CHECK(w.effective_islands == doctest::Approx(1.0 / (0.0625 + 0.5625)));
  CHECK(all_finite(w.weights));
}

TEST_CASE("combine is invariant to a common shift of log Z") {
  Rng rng(1);
  std::vector<RunResult> a, b;
  for (std::size_t p = 0; p < 5; ++p) {
    std::vector<ParamVector> s;
    for (int i = 0; i < 4; ++i) s.push_back({standard_normal(rng), standard_normal(rng)});
    const double lz = 10.0 * standard_normal(rng);
    a.push_back(island(p, lz, s));
    b.push_back(island(p, lz - 12345.678, s));
  }
  const auto ea = combine(a, identity), eb = combine(b, identity);
  for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(ea.estimate[j] - eb.estimate[j]) < 1e-12);
  double sum = 0.0;
  for (double w : ea.weights.weights) sum += w;
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("combine examples") {
  const std::vector<ParamVector> s0{{1.0}, {3.0}}, s1{{10.0}, {20.0}, {30.0}};
  SUBCASE("equal evidence averages island means") {
    const auto e = combine({island(0, -5.0, s0), island(1, -5.0, s1)}, identity);
    CHECK(e.estimate[0] == doctest::Approx(0.5 * 2.0 + 0.5 * 20.0));
  }
  SUBCASE("a single island has weight 1") {
    const auto e = combine({island(0, -123.0, s1)}, identity);
    CHECK(e.weights.weights[0] == 1.0);
    CHECK(e.estimate[0] == doctest::Approx(20.0));
  }
  SUBCASE("a dominant island takes over") {
    const auto e = combine({island(0, 0.0, s0), island(1, -60.0, s1)}, identity);
    CHECK(std::abs(e.estimate[0] - 2.0) < 1e-10);
  }
  SUBCASE("non-finite evidence is excluded") {
    const auto e = combine({island(0, std::nan(""), s0), island(1, -1.0, s1)}, identity);
    CHECK(e.weights.excluded == std::vector<std::size_t>{0});
    CHECK(e.weights.weights[0] == 0.0);
    CHECK(e.estimate[0] == doctest::Approx(20.0));
  }
  SUBCASE("particle weights are omega_p / N_p") {
    const std::vector<RunResult> rs{island(0, 0.0, s0), island(1, std::log(3.0), s1)};
    const auto pw = particle_weights(rs, island_weights(std::vector<double>{0.0, std::log(3.0)}));
    REQUIRE(pw.size() == 5);
    CHECK(pw[0] == doctest::Approx(0.125));
    CHECK(pw[4] == doctest::Approx(0.25));
  }
}

TEST_CASE("standard error") {
  const std::vector<double> constant(7, 3.3);
  CHECK(standard_error(constant).se < 1e-15);
  const auto two = standard_error(std::vector<double>{0.0, 2.0});
  CHECK(two.mean == 1.0);
  CHECK(two.se == doctest::Approx(std::sqrt(1.0) / std::sqrt(2.0)).epsilon(1e-15));
  const auto draws = random_vector(1000, 2);
  CHECK(std::abs(standard_error(draws).se * std::sqrt(1000.0) - 1.0) < 0.2);
  CHECK_THROWS_AS(standard_error(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("parallel islands") {
  const auto fam = TargetDensity(gaussian_likelihood({0.3, -0.4}, 0.3), GaussianPrior(1.0, 2));
  IslandJob job;
  job.smc.particles = 16;
  job.smc.kernel = HmcConfig{0.2, 2};
  SUBCASE("P = 1 equals a direct run with the same seed") {
    const auto rep = run_parallel(fam, job, 1, 99);
    SmcConfig direct = job.smc;
    direct.seed = 99;
    direct.island = 0;
    const auto d = run_smc(fam, direct);
    REQUIRE(rep.results.size() == 1);
    CHECK(rep.results[0].samples == d.samples);
    CHECK(rep.results[0].log_z == d.log_z);
  }
  SUBCASE("results do not depend on the worker count") {
    const auto a = run_parallel(fam, job, 4, 7, 1);
    const auto b = run_parallel(fam, job, 4, 7, 4);
    REQUIRE(a.results.size() == 4);
    for (std::size_t p = 0; p < 4; ++p) {
      CHECK(a.results[p].samples == b.results[p].samples);
      CHECK(a.results[p].log_z == b.results[p].log_z);
    }
    CHECK(a.results[0].samples != a.results[1].samples);
  }
  SUBCASE("MCMC islands carry log Z = 0") {
    job.method = Method::mcmc;
    job.mcmc.chains = 3;
    job.mcmc.steps = 20;
    const auto rep = run_parallel(fam, job, 2, 5);
    for (const auto& r : rep.results) CHECK(r.log_z == 0.0);
    const auto e = combine(rep.results, identity);
    CHECK(e.weights.weights[0] == 0.5);
  }
  SUBCASE("failing islands are reported and dropped") {
    auto lik = std::make_shared<Likelihood>(*gaussian_likelihood({0.0}, 1.0));
    lik->value_and_grad = [](std::span<const double>, std::span<double>) -> double {
      throw std::runtime_error("boom");
    };
    const auto bad = TargetDensity(lik, GaussianPrior(1.0, 1));
    const auto rep = run_parallel(bad, job, 2, 1);
    CHECK(rep.results.empty());
    REQUIRE(rep.failures.size() == 2);
    CHECK(rep.failures[0].message.find("boom") != std::string::npos);
  }
}
