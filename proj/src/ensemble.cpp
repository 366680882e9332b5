#include "sbmc/ensemble.hpp"

#include <algorithm>
#include <limits>
#include <optional>

namespace sbmc {

RunResult run_island(const TargetDensity& target, const IslandJob& job, std::size_t island,
                     std::uint64_t base_seed) {
  RunResult r;
  r.island = island;
  r.method = job.method;
  if (job.method == Method::smc) {
    SmcConfig cfg = job.smc;
    cfg.seed = base_seed;
    cfg.island = island;
    auto s = run_smc(target, cfg);
    r.samples = std::move(s.samples);
    r.log_z = s.log_z;
    r.epochs = s.epochs;
    r.schedule = std::move(s.schedule);
    r.stats = s.stats;
    if (!r.schedule.step_sizes.empty()) r.step_size = r.schedule.step_sizes.back();
  } else {
    McmcConfig cfg = job.mcmc;
    cfg.seed = base_seed;
    cfg.island = island;
    auto m = run_mcmc(target, cfg);
    r.samples = std::move(m.samples);
    r.log_z = 0.0;
    r.epochs = m.epochs;
    r.stats = m.stats;
    r.step_size = m.step_size;
  }
  return r;
}

ParallelReport run_parallel(const TargetDensity& target, const IslandJob& job, std::size_t P,
                            std::uint64_t base_seed, std::size_t threads) {
  if (P == 0) throw std::invalid_argument("need at least one island");
  std::vector<std::optional<RunResult>> slots(P);
  std::vector<std::string> errors(P);
  parallel_for(P, threads, [&](std::size_t p) {
    try {
      slots[p] = run_island(target, job, p, base_seed);
    } catch (const std::exception& e) {
      errors[p] = e.what();
    }
  });
  ParallelReport rep;
  for (std::size_t p = 0; p < P; ++p) {
    if (slots[p])
      rep.results.push_back(std::move(*slots[p]));
    else
      rep.failures.push_back({p, errors[p]});
  }
  return rep;
}

IslandWeights island_weights(std::span<const double> log_z) {
  if (log_z.empty()) throw std::invalid_argument("no islands to weight");
  IslandWeights w;
  w.weights.assign(log_z.size(), 0.0);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < log_z.size(); ++p) {
    if (std::isfinite(log_z[p]))
      top = std::max(top, log_z[p]);
    else
      w.excluded.push_back(p);
  }
  if (!std::isfinite(top)) throw NonFiniteError("every island has a non-finite log Z");
  double sum = 0.0;
  for (std::size_t p = 0; p < log_z.size(); ++p)
    if (std::isfinite(log_z[p])) sum += std::exp(log_z[p] - top);
  double sq = 0.0;
  for (std::size_t p = 0; p < log_z.size(); ++p) {
    if (std::isfinite(log_z[p])) w.weights[p] = std::exp(log_z[p] - top) / sum;
    sq += w.weights[p] * w.weights[p];
  }
  w.effective_islands = 1.0 / sq;
  return w;
}

std::vector<double> particle_weights(const std::vector<RunResult>& results,
                                     const IslandWeights& weights) {
  std::vector<double> out;
  for (std::size_t p = 0; p < results.size(); ++p) {
    const auto n = results[p].samples.size();
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(weights.weights[p] / static_cast<double>(n));
  }
  return out;
}

CombinedEstimate combine(const std::vector<RunResult>& results, const Functional& phi) {
  if (results.empty()) throw std::invalid_argument("no results to combine");
  std::vector<double> lz;
  lz.reserve(results.size());
  for (const auto& r : results) lz.push_back(r.log_z);
  CombinedEstimate c;
  c.weights = island_weights(lz);
  for (std::size_t p = 0; p < results.size(); ++p) {
    const double w = c.weights.weights[p];
    if (w == 0.0 || results[p].samples.empty()) continue;
    std::vector<double> island;
    for (const auto& th : results[p].samples) {
      const auto v = phi(th);
      if (island.empty()) island.assign(v.size(), 0.0);
      if (v.size() != island.size()) throw std::invalid_argument("functional size changed");
      for (std::size_t k = 0; k < v.size(); ++k) island[k] += v[k];
    }
    if (c.estimate.empty()) c.estimate.assign(island.size(), 0.0);
    if (island.size() != c.estimate.size()) throw std::invalid_argument("functional size changed");
    const double scale = w / static_cast<double>(results[p].samples.size());
    for (std::size_t k = 0; k < island.size(); ++k) c.estimate[k] += scale * island[k];
  }
  return c;
}

MeanSe standard_error(std::span<const double> e) {
  if (e.size() < 2) throw std::invalid_argument("standard error needs at least two realizations");
  const double r = static_cast<double>(e.size());
  MeanSe out;
  for (double x : e) out.mean += x;
  out.mean /= r;
  double ss = 0.0;
  for (double x : e) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / r) / std::sqrt(r);
  return out;
}

}  // namespace sbmc
