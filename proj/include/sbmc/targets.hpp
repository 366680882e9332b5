#pragma once

#include <functional>
#include <memory>
#include <variant>

#include "sbmc/common.hpp"

namespace sbmc {

/// Log-likelihood l(theta) with gradient, injected as plain functions so the
/// targets do not depend on any particular model.
struct Likelihood {
  std::size_t dim = 0;
  /// Returns l(theta).
  std::function<double(std::span<const double>)> value;
  /// Returns l(theta) and writes grad l(theta) into the second argument.
  std::function<double(std::span<const double>, std::span<double>)> value_and_grad;
  /// Number of full-data sweeps one call costs (1 for ordinary likelihoods).
  double sweeps_per_call = 1.0;
};

/// Isotropic prior N(0, v Id).
class GaussianPrior {
 public:
  GaussianPrior(double variance, std::size_t dim);

  double variance() const { return variance_; }
  std::size_t dim() const { return dim_; }
  double mean(std::size_t) const { return 0.0; }

 private:
  double variance_;
  std::size_t dim_;
};

/// MAP-anchored prior N(alpha(s) theta_map, s v Id) with alpha(s) = 1{s < 1/2}.
class AnchoredPrior {
 public:
  AnchoredPrior(std::shared_ptr<const ParamVector> anchor, double s, double base_variance);

  double s() const { return s_; }
  double base_variance() const { return base_variance_; }
  double alpha() const { return s_ < 0.5 ? 1.0 : 0.0; }
  double variance() const { return s_ * base_variance_; }
  std::size_t dim() const { return anchor_->size(); }
  double mean(std::size_t i) const { return alpha() * (*anchor_)[i]; }
  const ParamVector& anchor() const { return *anchor_; }

 private:
  std::shared_ptr<const ParamVector> anchor_;
  double s_;
  double base_variance_;
};

using Prior = std::variant<GaussianPrior, AnchoredPrior>;

std::size_t prior_dim(const Prior& prior);
double prior_variance(const Prior& prior);
double prior_mean(const Prior& prior, std::size_t i);
ParamVector prior_mean_vector(const Prior& prior);
/// Normalized log-density of the prior.
double prior_log_density(const Prior& prior, std::span<const double> theta);

/// Every piece of one target evaluation. log_density is
/// (lambda / T) * log_likelihood + (1 / T) * log_prior.
struct Evaluation {
  double log_likelihood = 0.0;
  double log_prior = 0.0;
  double log_density = 0.0;
};

/// Unnormalized tempered, anchored and/or cold log-density.
class TargetDensity {
 public:
  TargetDensity(std::shared_ptr<const Likelihood> likelihood, Prior prior,
                double lambda = 1.0, double temperature = 1.0);

  std::size_t dim() const { return prior_dim(prior_); }
  double lambda() const { return lambda_; }
  double temperature() const { return temperature_; }
  const Prior& prior() const { return prior_; }
  const Likelihood& likelihood() const { return *likelihood_; }
  std::shared_ptr<const Likelihood> likelihood_ptr() const { return likelihood_; }

  double log_density(std::span<const double> theta) const;
  ParamVector grad_log_density(std::span<const double> theta) const;

  Evaluation evaluate(std::span<const double> theta) const;
  /// Also writes the gradient of log_density into grad.
  Evaluation evaluate(std::span<const double> theta, std::span<double> grad) const;
  /// Always evaluates the likelihood (even at lambda = 0) and also returns
  /// the unscaled grad l(theta), so the result can be retargeted later.
  Evaluation evaluate_all(std::span<const double> theta, std::span<double> grad,
                          std::span<double> grad_log_likelihood) const;
  /// Density and gradient from a cached l(theta) and grad l(theta); no
  /// likelihood call.
  Evaluation combine(std::span<const double> theta, double log_likelihood,
                     std::span<const double> grad_log_likelihood, std::span<double> grad) const;

  /// Likelihood exponent lambda / T; the factor the SMC weights use.
  double likelihood_scale() const { return lambda_ / temperature_; }
  /// Variance of the Gaussian prior^(1/T), i.e. the lambda = 0 target.
  double effective_prior_variance() const { return temperature_ * prior_variance(prior_); }
  /// One draw from the lambda = 0 target.
  ParamVector sample_reference(Rng& rng) const;

  TargetDensity with_lambda(double lambda) const;

 private:
  void check_dim(std::span<const double> theta) const;

  std::shared_ptr<const Likelihood> likelihood_;
  Prior prior_;
  double lambda_;
  double temperature_;
};

/// Replaces the Gaussian prior of `posterior` by the anchored prior at
/// (theta_map, s). Throws std::invalid_argument for s outside [0, 1] or when
/// the posterior is already anchored.
TargetDensity make_anchored(const TargetDensity& posterior, const ParamVector& theta_map, double s);

/// Cold posterior: divides both the likelihood and prior exponents by T.
TargetDensity make_cold(const TargetDensity& posterior, double temperature);

}  // namespace sbmc
