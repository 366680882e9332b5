#include "sbmc/smc.hpp"

#include <algorithm>
#include <limits>

namespace sbmc {

namespace {

constexpr std::size_t kBisectionIterations = 50;
constexpr std::uint64_t kResampleStream = 0xFFFFFFFFull;
constexpr std::uint64_t kPilotStream = 0xFFFFFFFEull;

double* hmc_step_size(KernelConfig& k) {
  auto* h = std::get_if<HmcConfig>(&k);
  return h ? &h->step_size : nullptr;
}

void adapt(KernelConfig& kernel, double rate) {
  if (double* eps = hmc_step_size(kernel)) {
    if (rate < 0.6)
      *eps *= 0.5;
    else if (rate > 0.9)
      *eps *= 2.0;
  }
}

double epochs_of(const KernelStats& stats, const TargetDensity& t, std::size_t n) {
  return static_cast<double>(stats.evaluations) * t.likelihood().sweeps_per_call /
         static_cast<double>(n);
}

}  // namespace

double ess(std::span<const double> weights) {
  double sum = 0.0, sq = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("weights must be non-negative");
    sum += w;
    sq += w * w;
  }
  if (sum == 0.0) throw std::invalid_argument("degenerate ensemble: all weights are zero");
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to one");
  return 1.0 / sq;
}

double ess_at(std::span<const double> scaled_ll, double h) {
  std::vector<double> lw(scaled_ll.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = h * scaled_ll[i];
  const auto w = normalize_log_weights(lw);
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return 1.0 / sq;
}

LambdaStep next_lambda(std::span<const double> scaled_ll, double lambda, double rho) {
  if (!(lambda < 1.0)) throw std::invalid_argument("lambda is already 1");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
  for (std::size_t i = 0; i < scaled_ll.size(); ++i)
    if (!std::isfinite(scaled_ll[i]))
      throw NonFiniteError("non-finite log-likelihood at particle " + std::to_string(i));
  const double n = static_cast<double>(scaled_ll.size());
  const double want = rho * n;
  double hi = 1.0 - lambda;
  const double ess_hi = ess_at(scaled_ll, hi);
  if (ess_hi >= want) return {1.0, ess_hi};
  double lo = 0.0, ess_lo = n;
  for (std::size_t it = 0; it < kBisectionIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double e = ess_at(scaled_ll, mid);
    if (e >= want) {
      lo = mid;
      ess_lo = e;
    } else {
      hi = mid;
    }
    if (std::abs(ess_lo - want) <= 1e-3 * n && lo > 0.0) break;
  }
  if (lo <= 0.0) return {lambda + hi, ess_at(scaled_ll, hi)};
  return {std::min(1.0, lambda + lo), ess_lo};
}

std::vector<std::size_t> systematic_resample(std::span<const double> weights, Rng& rng) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> idx(n);
  const double u0 = uniform01(rng) / static_cast<double>(n);
  double cum = weights[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double u = u0 + static_cast<double>(k) / static_cast<double>(n);
    while (u > cum && j + 1 < n) cum += weights[++j];
    idx[k] = j;
  }
  return idx;
}

std::vector<double> ParticleEnsemble::scaled_log_likelihoods(double temperature) const {
  std::vector<double> out(particles.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = particles[i].eval.log_likelihood / temperature;
  return out;
}

void SmcConfig::validate() const {
  if (particles < 2) throw std::invalid_argument("SMC needs at least two particles");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (max_mutations < 2) throw std::invalid_argument("max_mutations must be at least 2");
  std::visit([](const auto& k) { k.validate(); }, kernel);
  if (!schedule.empty()) {
    double prev = 0.0;
    for (double l : schedule) {
      if (!(l > prev)) throw std::invalid_argument("schedule must be strictly increasing from 0");
      prev = l;
    }
    if (schedule.back() != 1.0) throw std::invalid_argument("schedule must end at 1");
  }
}

ParticleEnsemble init_ensemble(const TargetDensity& family, const SmcConfig& cfg,
                               KernelStats& stats) {
  const TargetDensity ref = family.with_lambda(0.0);
  ParticleEnsemble e;
  e.particles.resize(cfg.particles);
  e.rngs.reserve(cfg.particles);
  for (std::size_t i = 0; i < cfg.particles; ++i)
    e.rngs.emplace_back(derive_seed(cfg.seed, cfg.island, i));
  parallel_for(cfg.particles, cfg.threads, [&](std::size_t i) {
    e.particles[i] = make_state(ref, ref.sample_reference(e.rngs[i]));
  });
  stats.evaluations += cfg.particles;
  return e;
}

double reweight_and_resample(ParticleEnsemble& ensemble, const TargetDensity& family,
                             double lambda_next, Rng& rng, TemperSchedule& schedule) {
  if (!(lambda_next > ensemble.lambda)) throw std::invalid_argument("lambda must increase");
  const double dl = lambda_next - ensemble.lambda;
  const auto ll = ensemble.scaled_log_likelihoods(family.temperature());
  std::vector<double> lw(ll.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = dl * ll[i];
  const double inc = log_mean_exp(lw);
  if (!std::isfinite(inc)) throw NonFiniteError("non-finite normalizing-constant increment");
  ensemble.log_z += inc;
  const auto w = normalize_log_weights(lw);
  const double e = ess(w);
  if (e < 1.5)
    schedule.warnings.push_back("degenerate weights (ESS " + std::to_string(e) + ") at lambda " +
                                std::to_string(lambda_next));
  const auto idx = systematic_resample(w, rng);
  std::vector<ChainState> next(ensemble.size());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] = ensemble.particles[idx[i]];
  ensemble.particles = std::move(next);
  ensemble.lambda = lambda_next;
  const TargetDensity target = family.with_lambda(lambda_next);
  for (auto& p : ensemble.particles) retarget_state(target, p);
  return e;
}

MutationReport mutate(ParticleEnsemble& ensemble, const TargetDensity& target,
                      KernelConfig& kernel, double eta, std::size_t max_sweeps,
                      bool adapt_step_size, std::size_t threads, KernelStats& stats,
                      TemperSchedule& schedule) {
  const std::size_t n = ensemble.size();
  std::vector<ParamVector> start(n);
  for (std::size_t i = 0; i < n; ++i) start[i] = ensemble.particles[i].theta;
  std::vector<KernelStats> local(n);
  MutationReport rep;
  KernelStats total;
  double prev = 0.0;
  std::size_t idle = 0;
  for (std::size_t m = 1; m <= max_sweeps; ++m) {
    const KernelConfig k = kernel;
    for (auto& s : local) s = KernelStats{};
    parallel_for(n, threads, [&](std::size_t i) {
      kernel_step(target, ensemble.particles[i], k, ensemble.rngs[i], local[i]);
    });
    KernelStats sweep;
    for (const auto& s : local) sweep += s;
    total += sweep;
    idle = sweep.acceptances == 0 ? idle + 1 : 0;
    if (idle == 3)
      schedule.warnings.push_back("no proposal accepted for 3 sweeps at lambda " +
                                  std::to_string(ensemble.lambda));
    if (adapt_step_size) adapt(kernel, sweep.acceptance_rate());

    double dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      const auto& th = ensemble.particles[i].theta;
      for (std::size_t j = 0; j < th.size(); ++j) sq += (th[j] - start[i][j]) * (th[j] - start[i][j]);
      dist += std::sqrt(sq);
    }
    dist /= static_cast<double>(n);
    rep.sweeps = m;
    rep.displacement = dist;
    if (m >= 2) {
      if (prev == 0.0) break;
      if (std::abs(dist - prev) / prev <= eta) break;
    }
    prev = dist;
  }
  rep.acceptance = total.acceptance_rate();
  stats += total;
  return rep;
}

SmcResult run_smc(const TargetDensity& family, const SmcConfig& cfg) {
  cfg.validate();
  SmcResult res;
  res.schedule.adaptive = cfg.schedule.empty();
  ParticleEnsemble ens = init_ensemble(family, cfg, res.stats);
  Rng resample_rng(derive_seed(cfg.seed, cfg.island, kResampleStream));
  KernelConfig kernel = cfg.kernel;

  if (cfg.adapt_step_size) {
    if (auto* h = std::get_if<HmcConfig>(&kernel)) {
      Rng pilot_rng(derive_seed(cfg.seed, cfg.island, kPilotStream));
      h->step_size = tune_step_size(family.with_lambda(0.0), ens.particles[0], *h, pilot_rng,
                                    res.stats);
    }
  }

  std::size_t fixed = 0;
  while (ens.lambda < 1.0) {
    double next;
    if (res.schedule.adaptive) {
      next = next_lambda(ens.scaled_log_likelihoods(family.temperature()), ens.lambda, cfg.rho)
                 .lambda;
    } else {
      next = cfg.schedule[fixed++];
    }
    if (!(next > ens.lambda)) next = std::min(1.0, std::nextafter(ens.lambda, 2.0));
    const double e = reweight_and_resample(ens, family, next, resample_rng, res.schedule);
    const TargetDensity target = family.with_lambda(ens.lambda);
    const auto rep = mutate(ens, target, kernel, cfg.eta, cfg.max_mutations, cfg.adapt_step_size,
                            cfg.threads, res.stats, res.schedule);
    res.schedule.lambdas.push_back(ens.lambda);
    res.schedule.ess.push_back(e);
    res.schedule.mutations.push_back(rep.sweeps);
    res.schedule.acceptance.push_back(rep.acceptance);
    const double* eps = hmc_step_size(kernel);
    res.schedule.step_sizes.push_back(eps ? *eps : 0.0);
  }
  res.log_z = ens.log_z;
  res.samples.reserve(ens.size());
  for (auto& p : ens.particles) res.samples.push_back(std::move(p.theta));
  res.epochs = epochs_of(res.stats, family, cfg.particles);
  return res;
}

void McmcConfig::validate() const {
  if (chains == 0) throw std::invalid_argument("MCMC needs at least one chain");
  if (steps == 0) throw std::invalid_argument("MCMC needs at least one step");
  if (!(discard_fraction >= 0.0 && discard_fraction < 1.0))
    throw std::invalid_argument("discard_fraction must lie in [0, 1)");
  std::visit([](const auto& k) { k.validate(); }, kernel);
}

McmcResult run_mcmc(const TargetDensity& target, const McmcConfig& cfg) {
  cfg.validate();
  McmcResult res;
  const std::size_t n = cfg.chains;
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rngs.emplace_back(derive_seed(cfg.seed, cfg.island, i));
  std::vector<ChainState> states(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    states[i] = make_state(target, target.sample_reference(rngs[i]));
  });
  res.stats.evaluations += n;

  KernelConfig kernel = cfg.kernel;
  if (auto* h = std::get_if<HmcConfig>(&kernel)) {
    if (cfg.tune_step_size) {
      Rng pilot_rng(derive_seed(cfg.seed, cfg.island, kPilotStream));
      h->step_size = tune_step_size(target, states[0], *h, pilot_rng, res.stats);
    }
    res.step_size = h->step_size;
  }

  const std::size_t first_kept =
      static_cast<std::size_t>(std::floor(cfg.discard_fraction * static_cast<double>(cfg.steps)));
  std::vector<std::vector<ParamVector>> kept(n);
  std::vector<KernelStats> local(n);
  if (cfg.record_trace) {
    res.log_density_trace.assign(n, {});
    res.coordinate_trace.assign(n, {});
  }
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      kernel_step(target, states[i], kernel, rngs[i], local[i]);
      if (cfg.record_trace) {
        res.log_density_trace[i].push_back(states[i].eval.log_density);
        res.coordinate_trace[i].push_back(states[i].theta[0]);
      }
      if (cfg.average_trajectory && t >= first_kept) kept[i].push_back(states[i].theta);
    }
  });
  for (const auto& s : local) res.stats += s;
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.average_trajectory) {
      for (auto& th : kept[i]) res.samples.push_back(std::move(th));
    } else {
      res.samples.push_back(std::move(states[i].theta));
    }
  }
  res.epochs = epochs_of(res.stats, target, n);
  return res;
}

}  // namespace sbmc
