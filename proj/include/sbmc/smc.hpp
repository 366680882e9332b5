#pragma once

#include <string>

#include "sbmc/kernels.hpp"

namespace sbmc {

/// 1 / sum(w^2) for normalized weights.
double ess(std::span<const double> weights);

/// ESS of the weights proportional to exp(h * scaled_ll).
double ess_at(std::span<const double> scaled_ll, double h);

struct LambdaStep {
  double lambda = 1.0;
  /// ESS of the incremental weights at the chosen step.
  double ess = 0.0;
};

/// Next tempering level: lambda + h* with ESS(h*) = rho N found by bisection
/// on h in (0, 1 - lambda], or 1 when ESS(1 - lambda) >= rho N already.
/// `scaled_ll` holds l(theta^i) / T for each particle.
LambdaStep next_lambda(std::span<const double> scaled_ll, double lambda, double rho);

/// Systematic resampling: N ancestor indices from normalized weights.
std::vector<std::size_t> systematic_resample(std::span<const double> weights, Rng& rng);

struct TemperSchedule {
  std::vector<double> lambdas{0.0};
  /// ESS of the incremental weights before resampling at each step.
  std::vector<double> ess;
  /// Mutation sweeps used at each step.
  std::vector<std::size_t> mutations;
  /// Ensemble acceptance rate of the mutation at each step.
  std::vector<double> acceptance;
  /// HMC step size used at the end of each step (0 for pCN).
  std::vector<double> step_sizes;
  std::vector<std::string> warnings;
  bool adaptive = true;

  std::size_t steps() const { return lambdas.size() - 1; }
};

struct ParticleEnsemble {
  std::vector<ChainState> particles;
  /// One private stream per particle; stays with the slot across resampling.
  std::vector<Rng> rngs;
  double lambda = 0.0;
  double log_z = 0.0;

  std::size_t size() const { return particles.size(); }
  /// l(theta^i) / T for the given temperature.
  std::vector<double> scaled_log_likelihoods(double temperature) const;
};

struct SmcConfig {
  std::size_t particles = 10;
  double rho = 0.5;
  /// Relative tolerance on the mean displacement between mutation sweeps.
  double eta = 0.05;
  std::size_t max_mutations = 20;
  KernelConfig kernel = HmcConfig{};
  /// Pilot-tune the initial HMC step size and adapt it between sweeps.
  bool adapt_step_size = true;
  /// Fixed schedule 0 < lambda_1 < ... < lambda_J = 1; empty means adaptive.
  std::vector<double> schedule;
  std::uint64_t seed = 0;
  std::uint64_t island = 0;
  std::size_t threads = 1;

  void validate() const;
};

/// N draws from the lambda = 0 member of `family`, each with its own stream.
ParticleEnsemble init_ensemble(const TargetDensity& family, const SmcConfig& cfg,
                               KernelStats& stats);

/// Adds log-mean-exp((lambda_next - lambda) l / T) to log Z, resamples
/// systematically and moves the ensemble to lambda_next. Returns the ESS of
/// the incremental weights.
double reweight_and_resample(ParticleEnsemble& ensemble, const TargetDensity& family,
                             double lambda_next, Rng& rng, TemperSchedule& schedule);

struct MutationReport {
  std::size_t sweeps = 0;
  double displacement = 0.0;
  double acceptance = 0.0;
};

/// Kernel sweeps at the ensemble's current target until the mean
/// displacement from the starting states stabilizes (smallest M >= 2 with
/// |dist_M - dist_{M-1}| / dist_{M-1} <= eta), capped at max_sweeps. A
/// 0 / 0 ratio counts as converged. With adapt_step_size, the HMC step size
/// is doubled or halved between sweeps to keep acceptance in [0.6, 0.9].
MutationReport mutate(ParticleEnsemble& ensemble, const TargetDensity& target,
                      KernelConfig& kernel, double eta, std::size_t max_sweeps,
                      bool adapt_step_size, std::size_t threads, KernelStats& stats,
                      TemperSchedule& schedule);

struct SmcResult {
  std::vector<ParamVector> samples;
  double log_z = 0.0;
  TemperSchedule schedule;
  KernelStats stats;
  /// Likelihood(+gradient) sweeps per particle.
  double epochs = 0.0;
};

/// The tempered SMC sampler over family.with_lambda(lambda), lambda in [0, 1].
SmcResult run_smc(const TargetDensity& family, const SmcConfig& cfg);

struct McmcConfig {
  std::size_t chains = 10;
  std::size_t steps = 160;
  KernelConfig kernel = HmcConfig{};
  /// Pilot-tune the HMC step size once on the first chain's start.
  bool tune_step_size = true;
  /// When average_trajectory is set, every iterate after the first
  /// discard_fraction of each chain is returned; otherwise only final states.
  bool average_trajectory = false;
  double discard_fraction = 0.0;
  /// Record log-density and first-coordinate traces for diagnostics.
  bool record_trace = false;
  std::uint64_t seed = 0;
  std::uint64_t island = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct McmcResult {
  std::vector<ParamVector> samples;
  /// Per chain: log-density and theta[0] at every iterate (when recorded).
  std::vector<std::vector<double>> log_density_trace;
  std::vector<std::vector<double>> coordinate_trace;
  KernelStats stats;
  double step_size = 0.0;
  double epochs = 0.0;
};

/// N independent chains started from the lambda = 0 member of `target` and
/// run on `target` itself.
McmcResult run_mcmc(const TargetDensity& target, const McmcConfig& cfg);

}  // namespace sbmc
