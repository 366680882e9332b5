#pragma once

#include <string>

#include "sbmc/kernels.hpp"

namespace sbmc {

/// rho_0..rho_max_lag with the biased (1/T) autocovariance estimator.
std::vector<double> acf(std::span<const double> series, std::size_t max_lag);

/// 1 + 2 sum_{s >= 1} rho_s, truncated before the first negative rho_s or at
/// max_lag (0 means T / 2).
double iact(std::span<const double> series, std::size_t max_lag = 0);

/// One-dimensional bimodal toy: likelihood 0.5 N(theta; -mu, tau^2) +
/// 0.5 N(theta; mu, tau^2) under a N(0, v) prior.
struct ToyConfig {
  double mu = 1.2;
  double tau = 0.6;
  double prior_variance = 4.0;
};

TargetDensity bimodal_toy(const ToyConfig& cfg);
/// The mode of the toy posterior at theta > 0 (its MAP) by Newton iteration.
double bimodal_toy_map(const ToyConfig& cfg);

enum class GridKind { anchor_scale, temperature };

struct MixingRow {
  double setting = 0.0;
  double iact_coordinate = 0.0;
  double iact_log_density = 0.0;
  double acceptance = 0.0;
  double step_size = 0.0;
  /// ACF of theta[0] at lags 0..MixingConfig::acf_lags.
  std::vector<double> acf_coordinate;
};

struct MixingConfig {
  HmcConfig hmc{0.1, 5};
  std::size_t steps = 100000;
  std::size_t burn_in = 1000;
  bool tune_step_size = true;
  std::size_t acf_lags = 50;
  std::uint64_t seed = 0;
};

/// One long chain per grid value on the anchored (s-grid) or cold (T-grid)
/// version of `posterior`, started at theta_map; IACT of theta[0] and of
/// the log-density.
std::vector<MixingRow> mixing_comparison(const TargetDensity& posterior,
                                         const ParamVector& theta_map,
                                         std::span<const double> grid, GridKind kind,
                                         const MixingConfig& cfg);

}  // namespace sbmc
