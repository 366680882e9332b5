#include "sbmc/diagnostics.hpp"

#include <algorithm>
#include <numbers>

namespace sbmc {

namespace {

double centered_mean(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  return m / static_cast<double>(x.size());
}

double autocov(std::span<const double> x, double mean, std::size_t lag) {
  double s = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) s += (x[t + lag] - mean) * (x[t] - mean);
  return s / static_cast<double>(x.size());
}

void check_series(std::span<const double> x, std::size_t max_lag) {
  if (x.size() < 2 || x.size() < 2 * max_lag)
    throw std::invalid_argument("series needs at least 2 x max_lag samples");
  if (!all_finite(x)) throw std::invalid_argument("series has non-finite entries");
}

}  // namespace

std::vector<double> acf(std::span<const double> x, std::size_t max_lag) {
  check_series(x, max_lag);
  const double m = centered_mean(x);
  const double g0 = autocov(x, m, 0);
  if (!(g0 > 0.0)) throw std::invalid_argument("series has zero variance");
  std::vector<double> r(max_lag + 1);
  r[0] = 1.0;
  for (std::size_t s = 1; s <= max_lag; ++s) r[s] = autocov(x, m, s) / g0;
  return r;
}

double iact(std::span<const double> x, std::size_t max_lag) {
  if (max_lag == 0) max_lag = x.size() / 2;
  check_series(x, max_lag);
  const double m = centered_mean(x);
  const double g0 = autocov(x, m, 0);
  if (!(g0 > 0.0)) throw std::invalid_argument("series has zero variance");
  double sum = 0.0;
  for (std::size_t s = 1; s <= max_lag; ++s) {
    const double r = autocov(x, m, s) / g0;
    if (r < 0.0) break;
    sum += r;
  }
  return 1.0 + 2.0 * sum;
}

TargetDensity bimodal_toy(const ToyConfig& cfg) {
  auto lik = std::make_shared<Likelihood>();
  lik->dim = 1;
  const double mu = cfg.mu, tau = cfg.tau;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * tau * tau) + std::log(0.5);
  auto eval = [=](double th, double* grad) {
    const double a = -0.5 * (th + mu) * (th + mu) / (tau * tau);
    const double b = -0.5 * (th - mu) * (th - mu) / (tau * tau);
    const double top = std::max(a, b);
    const double ea = std::exp(a - top), eb = std::exp(b - top);
    if (grad) *grad = (ea * (-(th + mu)) + eb * (-(th - mu))) / ((ea + eb) * tau * tau);
    return norm + top + std::log(ea + eb);
  };
  lik->value = [eval](std::span<const double> th) { return eval(th[0], nullptr); };
  lik->value_and_grad = [eval](std::span<const double> th, std::span<double> g) {
    return eval(th[0], &g[0]);
  };
  return TargetDensity(lik, GaussianPrior(cfg.prior_variance, 1));
}

double bimodal_toy_map(const ToyConfig& cfg) {
  const auto post = bimodal_toy(cfg);
  double th = cfg.mu;
  for (int it = 0; it < 100; ++it) {
    const double h = 1e-5;
    const double g = post.grad_log_density(std::vector<double>{th})[0];
    const double gp = post.grad_log_density(std::vector<double>{th + h})[0];
    const double gm = post.grad_log_density(std::vector<double>{th - h})[0];
    const double hess = (gp - gm) / (2.0 * h);
    if (!(hess < 0.0)) break;
    const double step = g / hess;
    th -= step;
    if (std::abs(step) < 1e-13) break;
  }
  return th;
}

std::vector<MixingRow> mixing_comparison(const TargetDensity& posterior,
                                         const ParamVector& theta_map,
                                         std::span<const double> grid, GridKind kind,
                                         const MixingConfig& cfg) {
  std::vector<MixingRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const TargetDensity target = kind == GridKind::anchor_scale
                                     ? make_anchored(posterior, theta_map, grid[g])
                                     : make_cold(posterior, grid[g]);
    Rng rng(derive_seed(cfg.seed, g, 0));
    ChainState state = make_state(target, theta_map);
    HmcConfig hmc = cfg.hmc;
    KernelStats stats;
    if (cfg.tune_step_size) hmc.step_size = tune_step_size(target, state, hmc, rng, stats, 200);
    for (std::size_t t = 0; t < cfg.burn_in; ++t) hmc_step(target, state, hmc, rng, stats);
    stats = KernelStats{};
    std::vector<double> coord(cfg.steps), logd(cfg.steps);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      hmc_step(target, state, hmc, rng, stats);
      coord[t] = state.theta[0];
      logd[t] = state.eval.log_density;
    }
    MixingRow row;
    row.setting = grid[g];
    row.iact_coordinate = iact(coord);
    row.iact_log_density = iact(logd);
    row.acceptance = stats.acceptance_rate();
    row.step_size = hmc.step_size;
    row.acf_coordinate = acf(coord, std::min(cfg.acf_lags, cfg.steps / 2));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sbmc
