#pragma once

#include <array>

#include "sbmc/nn.hpp"

namespace sbmc {

/// Per-particle class probabilities for a set of inputs, with particle
/// weights and the weighted posterior-mean prediction.
struct PredictiveMatrix {
  std::size_t inputs = 0;
  std::size_t classes = 0;
  /// particle_probs[s][i * classes + k] = p(y = k | x_i, theta_s).
  std::vector<std::vector<double>> particle_probs;
  /// Sum to one.
  std::vector<double> weights;
  /// mean[i * classes + k] = sum_s w_s p(y = k | x_i, theta_s).
  std::vector<double> mean;

  std::size_t particles() const { return particle_probs.size(); }
  std::span<const double> prob(std::size_t s, std::size_t i) const {
    return {particle_probs[s].data() + i * classes, classes};
  }
  std::span<const double> mean_row(std::size_t i) const {
    return {mean.data() + i * classes, classes};
  }
};

/// Validates rows (each sums to one within 1e-9) and forms the weighted mean.
/// Empty weights mean equal weights.
PredictiveMatrix make_predictive(std::vector<std::vector<double>> particle_probs,
                                 std::vector<double> weights, std::size_t inputs,
                                 std::size_t classes);

/// Softmax outputs of every sample on every input of `data`.
PredictiveMatrix predictive(const Network& network, const std::vector<ParamVector>& samples,
                            std::vector<double> weights, const Dataset& data,
                            std::size_t threads = 1);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> p);

/// -sum p ln p with 0 ln 0 = 0.
double entropy(std::span<const double> p);

struct EntropyReport {
  std::vector<double> total;
  std::vector<double> aleatoric;
  std::vector<double> epistemic;
};

/// H_tot of the weighted mean, H_al the weighted mean of per-particle
/// entropies, H_ep = H_tot - H_al (nats).
EntropyReport entropy_decomposition(const PredictiveMatrix& m);

struct Metrics {
  double accuracy = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double ece = 0.0;
};

inline constexpr std::size_t kEceBins = 15;

/// Accuracy, NLL, Brier score and 15-bin ECE of the posterior mean.
Metrics metrics(const PredictiveMatrix& m, std::span<const int> labels);

inline constexpr std::size_t kFeatureCount = 7;
using FeatureVector = std::array<double, kFeatureCount>;

/// Per input: max of the mean prediction, H_tot, E[p_max], E[Delta_max],
/// H_ep, Var[p_max], Var[Delta_max], moments under the particle weights.
std::vector<FeatureVector> features(const PredictiveMatrix& m);

/// Per-feature mean and standard deviation frozen from training features.
struct Standardizer {
  FeatureVector mean{};
  FeatureVector sd{};

  static Standardizer fit(const std::vector<FeatureVector>& x);
  FeatureVector apply(const FeatureVector& f) const;
};

struct MetaConfig {
  std::size_t hidden = 50;
  /// Prior variance for the meta network's weights (regularization).
  double prior_variance = 1.0;
  /// Fraction of the training rows held out for early stopping.
  double validation_fraction = 0.2;
  OptConfig opt = [] {
    OptConfig o;
    o.learning_rate = 0.05;
    o.momentum = 0.9;
    o.max_epochs = 200;
    o.patience = 20;
    o.batch_size = 64;
    return o;
  }();
};

/// Binary classifier x -> z (z = 1: base prediction incorrect or input OOD)
/// on standardized features; a 7 -> hidden -> 2 softmax MLP.
class MetaClassifier {
 public:
  MetaClassifier(Standardizer standardizer, std::size_t hidden, ParamVector theta);

  double p_incorrect(const FeatureVector& raw) const;
  std::vector<double> scores(const std::vector<FeatureVector>& raw) const;

  const Standardizer& standardizer() const { return standardizer_; }
  std::size_t hidden() const { return hidden_; }
  const ParamVector& theta() const { return theta_; }

 private:
  Standardizer standardizer_;
  std::size_t hidden_;
  Network network_;
  ParamVector theta_;
};

MetaClassifier train_meta(const std::vector<FeatureVector>& raw, std::span<const int> z,
                          const MetaConfig& cfg);

struct AbstentionResult {
  std::vector<bool> abstain;
  std::size_t abstentions = 0;
  /// Correct predictions plus abstentions on would-be-incorrect items.
  double accuracy = 0.0;
};

/// Abstain iff score >= tau. z[i] = 1 when the base model would be wrong
/// (including every OOD input).
AbstentionResult abstain_2level(std::span<const double> scores, std::span<const int> z,
                                double tau);

struct ThresholdPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct ThresholdReport {
  ThresholdPoint at_half;
  ThresholdPoint best;
  double auc = 0.0;
};

/// Classification metrics of "score >= tau predicts z = 1".
ThresholdPoint classify_at(std::span<const double> scores, std::span<const int> z, double tau);

/// P(score of a random positive > score of a random negative), ties 1/2.
double auc_roc(std::span<const double> scores, std::span<const int> z);

/// Metrics at 0.5 and at the F1-maximizing threshold of the grid
/// 0, 0.001, ..., 1, plus AUC-ROC.
ThresholdReport threshold_metrics(std::span<const double> scores, std::span<const int> z);

}  // namespace sbmc
