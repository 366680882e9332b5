#pragma once

#include "sbmc/smc.hpp"

namespace sbmc {

enum class Method { smc, mcmc };

/// One island's output. MCMC islands carry log Z = 0.
struct RunResult {
  std::size_t island = 0;
  Method method = Method::smc;
  std::vector<ParamVector> samples;
  double log_z = 0.0;
  double epochs = 0.0;
  TemperSchedule schedule;
  KernelStats stats;
  double step_size = 0.0;
};

struct IslandJob {
  Method method = Method::smc;
  SmcConfig smc;
  McmcConfig mcmc;
};

struct IslandFailure {
  std::size_t island = 0;
  std::string message;
};

struct ParallelReport {
  /// Successful islands in island order.
  std::vector<RunResult> results;
  std::vector<IslandFailure> failures;
};

/// Runs one island with seed streams derive_seed(base_seed, island, i).
RunResult run_island(const TargetDensity& target, const IslandJob& job, std::size_t island,
                     std::uint64_t base_seed);

/// P share-nothing islands on up to `threads` workers. Failed islands are
/// reported and left out of the results.
ParallelReport run_parallel(const TargetDensity& target, const IslandJob& job, std::size_t P,
                            std::uint64_t base_seed, std::size_t threads = 1);

struct IslandWeights {
  /// omega_p proportional to Z_p; zero for excluded islands.
  std::vector<double> weights;
  /// 1 / sum(omega^2).
  double effective_islands = 0.0;
  /// Islands dropped for a non-finite log Z.
  std::vector<std::size_t> excluded;
};

/// Normalized island weights from log Z_p with the max subtracted first.
IslandWeights island_weights(std::span<const double> log_z);

/// Flattened particle weights omega_p / N_p, one per sample, island order.
std::vector<double> particle_weights(const std::vector<RunResult>& results,
                                     const IslandWeights& weights);

struct CombinedEstimate {
  std::vector<double> estimate;
  IslandWeights weights;
};

using Functional = std::function<std::vector<double>(std::span<const double>)>;

/// sum_p omega_p (1 / N_p) sum_i phi(theta^{i,p}).
CombinedEstimate combine(const std::vector<RunResult>& results, const Functional& phi);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and sqrt(sum (e_r - mean)^2 / R) / sqrt(R) over R >= 2 realizations.
MeanSe standard_error(std::span<const double> estimates);

}  // namespace sbmc
