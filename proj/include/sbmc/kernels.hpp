#pragma once

#include <functional>
#include <variant>

#include "sbmc/targets.hpp"

namespace sbmc {

/// Fixed-length HMC with identity mass.
struct HmcConfig {
  double step_size = 0.01;
  std::size_t leapfrog_steps = 1;
  void validate() const;
};

/// Preconditioned Crank-Nicolson: theta* = m + sqrt(1 - beta^2)(theta - m) + beta sigma xi.
struct PcnConfig {
  double beta = 0.1;
  void validate() const;
};

using KernelConfig = std::variant<HmcConfig, PcnConfig>;

/// Stochastic-gradient HMC (no Metropolis correction).
struct SghmcConfig {
  double step_size = 1e-3;
  double friction = 0.1;
  bool inject_noise = true;
  void validate() const;
};

/// A trajectory whose energy error exceeds this is divergent and rejected.
inline constexpr double kDivergenceThreshold = 1000.0;

struct KernelStats {
  std::size_t proposals = 0;
  std::size_t acceptances = 0;
  std::size_t divergences = 0;
  /// Likelihood (+ gradient) evaluations spent, including pilots.
  std::size_t evaluations = 0;

  std::size_t rejections() const { return proposals - acceptances; }
  double acceptance_rate() const {
    return proposals == 0 ? 0.0 : static_cast<double>(acceptances) / static_cast<double>(proposals);
  }
  KernelStats& operator+=(const KernelStats& o);
};

/// Current point of a chain with its cached evaluation. grad is the
/// gradient of the target log-density, grad_log_likelihood the unscaled
/// grad l(theta); both are stale when grad_valid is false (after pCN moves).
struct ChainState {
  ParamVector theta;
  Evaluation eval;
  ParamVector grad;
  ParamVector grad_log_likelihood;
  bool grad_valid = false;
};

/// Evaluates `target`, the likelihood and both gradients at theta.
ChainState make_state(const TargetDensity& target, ParamVector theta);
/// Re-evaluates everything from scratch. Returns the evaluations spent (1).
std::size_t refresh_state(const TargetDensity& target, ChainState& state);
/// Recomputes density and gradient for a changed lambda or prior from the
/// cached likelihood terms. Falls back to refresh_state when the gradient is
/// stale; returns the likelihood evaluations spent (0 or 1).
std::size_t retarget_state(const TargetDensity& target, ChainState& state);

struct LeapfrogResult {
  ParamVector theta;
  ParamVector momentum;
  ParamVector grad;
  ParamVector grad_log_likelihood;
  Evaluation eval;
  bool divergent = false;
  std::size_t evaluations = 0;
};

/// L leapfrog steps of the Hamiltonian -log pi(theta) + |p|^2 / 2, starting
/// from a known gradient at theta. A non-finite evaluation marks the
/// trajectory divergent and stops it.
LeapfrogResult leapfrog(const TargetDensity& target, std::span<const double> theta,
                        std::span<const double> grad, std::span<const double> momentum,
                        double step_size, std::size_t steps);
/// As above, computing the starting gradient first.
LeapfrogResult leapfrog(const TargetDensity& target, std::span<const double> theta,
                        std::span<const double> momentum, double step_size, std::size_t steps);

/// One Metropolis-corrected HMC transition. Returns true on acceptance.
bool hmc_step(const TargetDensity& target, ChainState& state, const HmcConfig& cfg, Rng& rng,
              KernelStats& stats);

/// One pCN transition about the prior mean of `target`; accepted with
/// probability min(1, exp((lambda / T)(l(theta*) - l(theta)))).
bool pcn_step(const TargetDensity& target, ChainState& state, const PcnConfig& cfg, Rng& rng,
              KernelStats& stats);

bool kernel_step(const TargetDensity& target, ChainState& state, const KernelConfig& cfg,
                 Rng& rng, KernelStats& stats);

/// Writes an estimate of grad log pi(theta) into the output span.
using StochasticGradient =
    std::function<void(std::span<const double>, std::span<double>, Rng&)>;

struct SghmcState {
  ParamVector theta;
  ParamVector momentum;
};

/// p <- p + eps g(theta) - eps C p + N(0, 2 C eps);  theta <- theta + eps p.
void sghmc_step(const StochasticGradient& gradient, SghmcState& state, const SghmcConfig& cfg,
                Rng& rng);

/// Short pilot that doubles or halves the HMC step size until the pilot
/// acceptance rate lands in [0.6, 0.9]. The chain state is not advanced.
double tune_step_size(const TargetDensity& target, const ChainState& state, HmcConfig cfg,
                      Rng& rng, KernelStats& stats, std::size_t pilot_steps = 20,
                      std::size_t max_rounds = 20);

}  // namespace sbmc
