#include "sbmc/uq.hpp"

#include <algorithm>
#include <numeric>

namespace sbmc {

PredictiveMatrix make_predictive(std::vector<std::vector<double>> particle_probs,
                                 std::vector<double> weights, std::size_t inputs,
                                 std::size_t classes) {
  if (particle_probs.empty()) throw std::invalid_argument("predictive needs at least one particle");
  if (classes == 0) throw std::invalid_argument("predictive needs at least one class");
  const std::size_t s_count = particle_probs.size();
  if (weights.empty()) weights.assign(s_count, 1.0 / static_cast<double>(s_count));
  if (weights.size() != s_count) throw std::invalid_argument("one weight per particle required");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("particle weights must be non-negative");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("particle weights must sum to one");

  PredictiveMatrix m;
  m.inputs = inputs;
  m.classes = classes;
  m.mean.assign(inputs * classes, 0.0);
  for (std::size_t s = 0; s < s_count; ++s) {
    const auto& p = particle_probs[s];
    if (p.size() != inputs * classes) throw std::invalid_argument("probability block has wrong size");
    for (std::size_t i = 0; i < inputs; ++i) {
      double row = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        const double v = p[i * classes + k];
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("probabilities must lie in [0, 1]");
        row += v;
        m.mean[i * classes + k] += weights[s] * v;
      }
      if (std::abs(row - 1.0) > 1e-9)
        throw std::invalid_argument("probability row " + std::to_string(i) + " of particle " +
                                    std::to_string(s) + " does not sum to one");
    }
  }
  m.particle_probs = std::move(particle_probs);
  m.weights = std::move(weights);
  return m;
}

PredictiveMatrix predictive(const Network& network, const std::vector<ParamVector>& samples,
                            std::vector<double> weights, const Dataset& data,
                            std::size_t threads) {
  std::vector<std::vector<double>> probs(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t s) { probs[s] = network.predict(samples[s], data); });
  return make_predictive(std::move(probs), std::move(weights), data.size(), network.classes());
}

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

EntropyReport entropy_decomposition(const PredictiveMatrix& m) {
  if (m.inputs == 0 || m.particles() == 0) throw std::invalid_argument("empty predictive matrix");
  EntropyReport r;
  r.total.resize(m.inputs);
  r.aleatoric.assign(m.inputs, 0.0);
  r.epistemic.resize(m.inputs);
  for (std::size_t i = 0; i < m.inputs; ++i) {
    r.total[i] = entropy(m.mean_row(i));
    for (std::size_t s = 0; s < m.particles(); ++s) r.aleatoric[i] += m.weights[s] * entropy(m.prob(s, i));
    double ep = r.total[i] - r.aleatoric[i];
    if (ep < 0.0 && ep >= -1e-9) ep = 0.0;
    r.epistemic[i] = ep;
  }
  return r;
}

Metrics metrics(const PredictiveMatrix& m, std::span<const int> labels) {
  if (labels.size() != m.inputs) throw std::invalid_argument("one label per input required");
  if (m.inputs == 0) throw std::invalid_argument("metrics need at least one input");
  const std::size_t K = m.classes;
  Metrics out;
  std::array<double, kEceBins> conf{}, hits{};
  std::array<std::size_t, kEceBins> count{};
  for (std::size_t i = 0; i < m.inputs; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw std::invalid_argument("input " + std::to_string(i) + " has no valid label");
    const auto row = m.mean_row(i);
    const std::size_t pred = argmax(row);
    const bool hit = pred == static_cast<std::size_t>(y);
    out.accuracy += hit;
    out.nll -= std::log(row[y]);
    for (std::size_t k = 0; k < K; ++k) {
      const double t = k == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      out.brier += (row[k] - t) * (row[k] - t);
    }
    const double c = row[pred];
    const auto b = std::min(kEceBins - 1, static_cast<std::size_t>(c * static_cast<double>(kEceBins)));
    conf[b] += c;
    hits[b] += hit;
    ++count[b];
  }
  const double n = static_cast<double>(m.inputs);
  out.accuracy /= n;
  out.nll /= n;
  out.brier /= n;
  for (std::size_t b = 0; b < kEceBins; ++b)
    if (count[b] > 0) out.ece += std::abs(hits[b] - conf[b]) / n;
  return out;
}

namespace {

// Largest entry and the gap to the runner-up.
std::pair<double, double> top_two(std::span<const double> p) {
  const std::size_t best = argmax(p);
  double second = -1.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k != best) second = std::max(second, p[k]);
  return {p[best], p[best] - second};
}

}  // namespace

std::vector<FeatureVector> features(const PredictiveMatrix& m) {
  if (m.classes < 2) throw std::invalid_argument("Delta_max needs at least two classes");
  const auto h = entropy_decomposition(m);
  std::vector<FeatureVector> out(m.inputs);
  for (std::size_t i = 0; i < m.inputs; ++i) {
    double ep = 0.0, ed = 0.0;
    for (std::size_t s = 0; s < m.particles(); ++s) {
      const auto [pm, dm] = top_two(m.prob(s, i));
      ep += m.weights[s] * pm;
      ed += m.weights[s] * dm;
    }
    double vp = 0.0, vd = 0.0;
    for (std::size_t s = 0; s < m.particles(); ++s) {
      const auto [pm, dm] = top_two(m.prob(s, i));
      vp += m.weights[s] * (pm - ep) * (pm - ep);
      vd += m.weights[s] * (dm - ed) * (dm - ed);
    }
    const auto row = m.mean_row(i);
    out[i] = {row[argmax(row)], h.total[i], ep, ed, h.epistemic[i], vp, vd};
  }
  return out;
}

Standardizer Standardizer::fit(const std::vector<FeatureVector>& x) {
  if (x.empty()) throw std::invalid_argument("cannot standardize an empty feature set");
  Standardizer s;
  const double n = static_cast<double>(x.size());
  for (const auto& f : x)
    for (std::size_t j = 0; j < kFeatureCount; ++j) s.mean[j] += f[j] / n;
  for (const auto& f : x)
    for (std::size_t j = 0; j < kFeatureCount; ++j) s.sd[j] += (f[j] - s.mean[j]) * (f[j] - s.mean[j]) / n;
  for (double& v : s.sd) v = v > 0.0 ? std::sqrt(v) : 1.0;
  return s;
}

FeatureVector Standardizer::apply(const FeatureVector& f) const {
  FeatureVector z;
  for (std::size_t j = 0; j < kFeatureCount; ++j) z[j] = (f[j] - mean[j]) / sd[j];
  return z;
}

MetaClassifier::MetaClassifier(Standardizer standardizer, std::size_t hidden, ParamVector theta)
    : standardizer_(standardizer),
      hidden_(hidden),
      network_(NetworkSpec::mlp({kFeatureCount, hidden, 2})),
      theta_(std::move(theta)) {
  if (theta_.size() != network_.param_count())
    throw std::invalid_argument("meta-classifier parameter count mismatch");
}

double MetaClassifier::p_incorrect(const FeatureVector& raw) const {
  const auto z = standardizer_.apply(raw);
  return network_.forward(theta_, z)[1];
}

std::vector<double> MetaClassifier::scores(const std::vector<FeatureVector>& raw) const {
  std::vector<double> s(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) s[i] = p_incorrect(raw[i]);
  return s;
}

MetaClassifier train_meta(const std::vector<FeatureVector>& raw, std::span<const int> z,
                          const MetaConfig& cfg) {
  if (raw.size() != z.size()) throw std::invalid_argument("one z label per feature row required");
  const auto pos = std::count(z.begin(), z.end(), 1);
  for (int v : z)
    if (v != 0 && v != 1) throw std::invalid_argument("z labels must be 0 or 1");
  if (pos == 0 || pos == static_cast<long>(z.size()))
    throw std::invalid_argument("meta-classifier training needs both z = 0 and z = 1");

  const auto st = Standardizer::fit(raw);
  Dataset all;
  all.input_dim = kFeatureCount;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto f = st.apply(raw[i]);
    all.push_back(f, z[i]);
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.opt.seed, 0x3E7A, 0));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(all.size()));
  std::vector<std::size_t> vi(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> ti(order.begin() + static_cast<long>(n_val), order.end());
  const Dataset train = all.subset(ti), val = all.subset(vi);

  Network net(NetworkSpec::mlp({kFeatureCount, cfg.hidden, 2}));
  auto r = map_estimate(net, GaussianPrior(cfg.prior_variance, net.param_count()), train, val, cfg.opt);
  return MetaClassifier(st, cfg.hidden, std::move(r.theta));
}

AbstentionResult abstain_2level(std::span<const double> scores, std::span<const int> z, double tau) {
  if (scores.size() != z.size()) throw std::invalid_argument("one z label per score required");
  AbstentionResult r;
  r.abstain.resize(scores.size());
  double good = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool a = scores[i] >= tau;
    r.abstain[i] = a;
    r.abstentions += a;
    good += a ? (z[i] == 1) : (z[i] == 0);
  }
  r.accuracy = scores.empty() ? 0.0 : good / static_cast<double>(scores.size());
  return r;
}

ThresholdPoint classify_at(std::span<const double> scores, std::span<const int> z, double tau) {
  if (scores.size() != z.size()) throw std::invalid_argument("one z label per score required");
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] >= tau;
    if (p && z[i] == 1) ++tp;
    else if (p) ++fp;
    else if (z[i] == 1) ++fn;
    else ++tn;
  }
  ThresholdPoint t;
  t.threshold = tau;
  t.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  t.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  t.f1 = t.precision + t.recall > 0 ? 2 * t.precision * t.recall / (t.precision + t.recall) : 0.0;
  t.accuracy = scores.empty() ? 0.0 : (tp + tn) / static_cast<double>(scores.size());
  return t;
}

double auc_roc(std::span<const double> scores, std::span<const int> z) {
  if (scores.size() != z.size()) throw std::invalid_argument("one z label per score required");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (z[idx[k]] == 1) {
        rank_sum += avg;
        ++pos;
      }
    i = j + 1;
  }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("AUC needs both classes");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

ThresholdReport threshold_metrics(std::span<const double> scores, std::span<const int> z) {
  ThresholdReport r;
  r.auc = auc_roc(scores, z);
  r.at_half = classify_at(scores, z, 0.5);
  r.best = classify_at(scores, z, 0.0);
  for (int k = 1; k <= 1000; ++k) {
    const auto t = classify_at(scores, z, k / 1000.0);
    if (t.f1 > r.best.f1) r.best = t;
  }
  return r;
}

}  // namespace sbmc
