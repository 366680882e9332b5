#include "sbmc/kernels.hpp"

namespace sbmc {

void HmcConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("HMC step size must be finite and non-negative");
  if (leapfrog_steps == 0) throw std::invalid_argument("HMC needs at least one leapfrog step");
}

void PcnConfig::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("pCN beta must lie in (0, 1]");
}

void SghmcConfig::validate() const {
  if (!(step_size >= 0.0)) throw std::invalid_argument("SGHMC step size must be non-negative");
  if (!(friction >= 0.0)) throw std::invalid_argument("SGHMC friction must be non-negative");
}

KernelStats& KernelStats::operator+=(const KernelStats& o) {
  proposals += o.proposals;
  acceptances += o.acceptances;
  divergences += o.divergences;
  evaluations += o.evaluations;
  return *this;
}

ChainState make_state(const TargetDensity& target, ParamVector theta) {
  ChainState s;
  s.theta = std::move(theta);
  refresh_state(target, s);
  return s;
}

std::size_t refresh_state(const TargetDensity& target, ChainState& state) {
  state.grad.resize(state.theta.size());
  state.grad_log_likelihood.resize(state.theta.size());
  state.eval = target.evaluate_all(state.theta, state.grad, state.grad_log_likelihood);
  state.grad_valid = true;
  return 1;
}

std::size_t retarget_state(const TargetDensity& target, ChainState& state) {
  if (!state.grad_valid) return refresh_state(target, state);
  state.eval = target.combine(state.theta, state.eval.log_likelihood, state.grad_log_likelihood,
                              state.grad);
  return 0;
}

LeapfrogResult leapfrog(const TargetDensity& target, std::span<const double> theta,
                        std::span<const double> grad, std::span<const double> momentum,
                        double step_size, std::size_t steps) {
  const std::size_t d = theta.size();
  if (grad.size() != d || momentum.size() != d) throw std::invalid_argument("dimension mismatch");
  LeapfrogResult r;
  r.theta.assign(theta.begin(), theta.end());
  r.momentum.assign(momentum.begin(), momentum.end());
  r.grad.assign(grad.begin(), grad.end());
  r.grad_log_likelihood.resize(d);
  const double half = 0.5 * step_size;
  for (std::size_t l = 0; l < steps; ++l) {
    for (std::size_t i = 0; i < d; ++i) {
      r.momentum[i] += half * r.grad[i];
      r.theta[i] += step_size * r.momentum[i];
    }
    try {
      r.eval = target.evaluate_all(r.theta, r.grad, r.grad_log_likelihood);
      ++r.evaluations;
    } catch (const NonFiniteError&) {
      ++r.evaluations;
      r.divergent = true;
      return r;
    }
    if (!std::isfinite(r.eval.log_density)) {
      r.divergent = true;
      return r;
    }
    for (std::size_t i = 0; i < d; ++i) r.momentum[i] += half * r.grad[i];
  }
  return r;
}

LeapfrogResult leapfrog(const TargetDensity& target, std::span<const double> theta,
                        std::span<const double> momentum, double step_size, std::size_t steps) {
  ParamVector g(theta.size());
  ParamVector gl(theta.size());
  target.evaluate_all(theta, g, gl);
  auto r = leapfrog(target, theta, g, momentum, step_size, steps);
  ++r.evaluations;
  return r;
}

bool hmc_step(const TargetDensity& target, ChainState& state, const HmcConfig& cfg, Rng& rng,
              KernelStats& stats) {
  const std::size_t d = state.theta.size();
  if (!state.grad_valid) stats.evaluations += refresh_state(target, state);
  ParamVector p(d);
  for (double& v : p) v = standard_normal(rng);
  const double h0 = -state.eval.log_density + 0.5 * squared_norm(p);

  auto r = leapfrog(target, state.theta, state.grad, p, cfg.step_size, cfg.leapfrog_steps);
  ++stats.proposals;
  stats.evaluations += r.evaluations;
  if (!r.divergent) {
    const double h1 = -r.eval.log_density + 0.5 * squared_norm(r.momentum);
    if (!std::isfinite(h1) || std::abs(h1 - h0) > kDivergenceThreshold) {
      r.divergent = true;
    } else {
      const double u = uniform01(rng);
      if (std::log(u) < h0 - h1) {
        state.theta = std::move(r.theta);
        state.grad = std::move(r.grad);
        state.grad_log_likelihood = std::move(r.grad_log_likelihood);
        state.eval = r.eval;
        ++stats.acceptances;
        return true;
      }
      return false;
    }
  }
  ++stats.divergences;
  return false;
}

bool pcn_step(const TargetDensity& target, ChainState& state, const PcnConfig& cfg, Rng& rng,
              KernelStats& stats) {
  const std::size_t d = state.theta.size();
  const double sigma = std::sqrt(target.effective_prior_variance());
  const double keep = std::sqrt(1.0 - cfg.beta * cfg.beta);
  ParamVector proposal(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double m = prior_mean(target.prior(), i);
    proposal[i] = m + keep * (state.theta[i] - m) + cfg.beta * sigma * standard_normal(rng);
  }
  ++stats.proposals;
  ++stats.evaluations;
  const double ll = target.likelihood().value(proposal);
  if (!std::isfinite(ll)) {
    ++stats.divergences;
    return false;
  }
  const double log_ratio = target.likelihood_scale() * (ll - state.eval.log_likelihood);
  if (std::log(uniform01(rng)) < log_ratio) {
    state.eval.log_likelihood = ll;
    state.eval.log_prior = prior_log_density(target.prior(), proposal);
    state.eval.log_density =
        (target.lambda() * ll + state.eval.log_prior) / target.temperature();
    state.theta = std::move(proposal);
    state.grad_valid = false;
    ++stats.acceptances;
    return true;
  }
  return false;
}

bool kernel_step(const TargetDensity& target, ChainState& state, const KernelConfig& cfg,
                 Rng& rng, KernelStats& stats) {
  return std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, HmcConfig>)
          return hmc_step(target, state, c, rng, stats);
        else
          return pcn_step(target, state, c, rng, stats);
      },
      cfg);
}

void sghmc_step(const StochasticGradient& gradient, SghmcState& state, const SghmcConfig& cfg,
                Rng& rng) {
  cfg.validate();
  const std::size_t d = state.theta.size();
  if (state.momentum.size() != d) state.momentum.assign(d, 0.0);
  ParamVector g(d);
  gradient(state.theta, g, rng);
  const double noise_sd = cfg.inject_noise ? std::sqrt(2.0 * cfg.friction * cfg.step_size) : 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double& p = state.momentum[i];
    p += cfg.step_size * g[i] - cfg.step_size * cfg.friction * p;
    if (noise_sd > 0.0) p += noise_sd * standard_normal(rng);
    state.theta[i] += cfg.step_size * p;
  }
}

double tune_step_size(const TargetDensity& target, const ChainState& state, HmcConfig cfg,
                      Rng& rng, KernelStats& stats, std::size_t pilot_steps,
                      std::size_t max_rounds) {
  cfg.validate();
  if (cfg.step_size <= 0.0) cfg.step_size = 1e-3;
  int last_direction = 0;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    ChainState pilot = state;
    KernelStats local;
    for (std::size_t i = 0; i < pilot_steps; ++i) hmc_step(target, pilot, cfg, rng, local);
    stats.evaluations += local.evaluations;
    const double rate = local.acceptance_rate();
    if (rate >= 0.6 && rate <= 0.9) break;
    const int direction = rate < 0.6 ? -1 : 1;
    // Oscillating between a too-small and a too-large step: keep the smaller.
    if (last_direction != 0 && direction != last_direction) {
      if (direction < 0) cfg.step_size *= 0.5;
      break;
    }
    cfg.step_size = direction < 0 ? cfg.step_size * 0.5 : cfg.step_size * 2.0;
    last_direction = direction;
  }
  return cfg.step_size;
}

}  // namespace sbmc
