#pragma once

#include <memory>
#include <optional>
#include <string>

#include "sbmc/common.hpp"
#include "sbmc/targets.hpp"

namespace sbmc {

enum class Architecture { mlp, cnn };

/// Classifier architecture. Parameter layout is layer-major with each
/// layer's weights (row-major, output index outermost) before its biases.
///
/// MLP: widths n0..nD, ReLU between layers, softmax on the nD = K outputs.
/// CNN: one conv layer (conv_channels filters of kernel x kernel, stride 1,
/// zero padding kernel / 2), ReLU, 2x2 max-pool, linear layer to K classes.
struct NetworkSpec {
  Architecture arch = Architecture::mlp;
  std::vector<std::size_t> widths;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 1;
  std::size_t conv_channels = 4;
  std::size_t kernel = 3;
  std::size_t num_classes = 8;

  static NetworkSpec mlp(std::vector<std::size_t> widths);
  static NetworkSpec cnn(std::size_t height, std::size_t width, std::size_t channels,
                         std::size_t classes, std::size_t conv_channels = 4,
                         std::size_t kernel = 3);

  std::size_t input_dim() const;
  std::size_t classes() const;
  std::size_t param_count() const;
  void validate() const;
};

enum class Split { train, validation, test, ood };

/// Inputs stored row-major (size() x input_dim). Labels are 0-based class
/// indices; kUnlabeled marks items without a valid label.
struct Dataset {
  static constexpr int kUnlabeled = -1;

  std::size_t input_dim = 0;
  std::vector<double> inputs;
  std::vector<int> labels;
  Split split = Split::train;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::span<const double> input(std::size_t i) const {
    return {inputs.data() + i * input_dim, input_dim};
  }
  void push_back(std::span<const double> x, int label);
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
  void append(const Dataset& other);
};

/// Forward pass and exact backpropagation for a NetworkSpec.
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t classes() const { return spec_.classes(); }

  /// Pre-softmax outputs g(x, theta).
  std::vector<double> logits(std::span<const double> theta, std::span<const double> x) const;
  /// Softmax probabilities h(x, theta).
  std::vector<double> forward(std::span<const double> theta, std::span<const double> x) const;
  /// size() x K probabilities, row-major.
  std::vector<double> predict(std::span<const double> theta, const Dataset& data) const;

  /// sum_i ln h_{y_i}(x_i, theta) over `indices` (all items when empty).
  double log_likelihood(std::span<const double> theta, const Dataset& data,
                        std::span<const std::size_t> indices = {}) const;
  /// As log_likelihood; also overwrites grad with the exact gradient.
  double log_likelihood_and_grad(std::span<const double> theta, const Dataset& data,
                                 std::span<double> grad,
                                 std::span<const std::size_t> indices = {}) const;

  /// Zero-mean Gaussian initialization with the given per-coordinate variance.
  ParamVector initialize(double variance, Rng& rng) const;

 private:
  struct Workspace;
  double item_loglik(std::span<const double> theta, std::span<const double> x, int label,
                     std::span<double> grad, Workspace& ws) const;
  void mlp_forward(std::span<const double> theta, std::span<const double> x, Workspace& ws) const;
  void cnn_forward(std::span<const double> theta, std::span<const double> x, Workspace& ws) const;
  void mlp_backward(std::span<const double> theta, std::span<double> grad, Workspace& ws) const;
  void cnn_backward(std::span<const double> theta, std::span<double> grad, Workspace& ws) const;

  NetworkSpec spec_;
  std::size_t param_count_;
};

/// Full-data log-likelihood of `data` under `network`, packaged for TargetDensity.
std::shared_ptr<const Likelihood> make_likelihood(std::shared_ptr<const Network> network,
                                                  std::shared_ptr<const Dataset> data);

struct OptConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 160;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 10;
  double momentum = 0.0;
  /// Learning rate is divided by 10 once this fraction of max_epochs has run.
  double decay_at = 0.8;
  std::uint64_t seed = 0;
};

struct MapResult {
  ParamVector theta;
  std::size_t epochs_used = 0;
  std::size_t best_epoch = 0;
  double best_val_nll = 0.0;
};

/// SGD on the negative log posterior diverged; carries the last finite iterate.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, ParamVector last_finite, std::size_t epoch)
      : std::runtime_error(what), last_finite_(std::move(last_finite)), epoch_(epoch) {}
  const ParamVector& last_finite() const { return last_finite_; }
  std::size_t epoch() const { return epoch_; }

 private:
  ParamVector last_finite_;
  std::size_t epoch_;
};

/// A sum-of-items log-likelihood for map_optimize.
struct SgdProblem {
  std::size_t dim = 0;
  std::size_t items = 0;
  std::function<ParamVector(Rng&)> init;
  /// Sum of the batch items' log-likelihoods; overwrites grad with its gradient.
  std::function<double(std::span<const double>, std::span<const std::size_t>, std::span<double>)>
      batch_log_likelihood;
  /// Mean validation NLL for early stopping; empty disables monitoring.
  std::function<double(std::span<const double>)> validation_nll;
};

/// Minibatch SGD with momentum on the per-item negative log posterior
/// -(l(theta) + log pi0(theta)) / items. The learning rate drops tenfold
/// after decay_at * max_epochs. With monitoring, the best validation iterate
/// is returned and patience epochs without improvement stop the run.
MapResult map_optimize(const SgdProblem& problem, const GaussianPrior& prior, const OptConfig& cfg);

/// Minibatch SGD on -(l(theta) + log pi0(theta)) with early stopping on the
/// validation NLL; the best validation iterate is restored. When `val` is
/// empty the final iterate is returned after max_epochs.
MapResult map_estimate(const Network& network, const GaussianPrior& prior, const Dataset& train,
                       const Dataset& val, const OptConfig& cfg);

/// N independent MAP estimates; member k uses seed seeds[k].
std::vector<MapResult> deep_ensemble(const Network& network, const GaussianPrior& prior,
                                     const Dataset& train, const Dataset& val,
                                     const OptConfig& cfg, std::span<const std::uint64_t> seeds);

/// Mean negative log-likelihood per item.
double mean_nll(const Network& network, std::span<const double> theta, const Dataset& data);
double accuracy(const Network& network, std::span<const double> theta, const Dataset& data);

}  // namespace sbmc
