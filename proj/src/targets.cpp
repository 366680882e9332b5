#include "sbmc/targets.hpp"

#include <algorithm>
#include <numbers>

namespace sbmc {

GaussianPrior::GaussianPrior(double variance, std::size_t dim) : variance_(variance), dim_(dim) {
  if (!(variance > 0.0)) throw std::invalid_argument("prior variance must be positive");
  if (dim == 0) throw std::invalid_argument("prior dimension must be positive");
}

AnchoredPrior::AnchoredPrior(std::shared_ptr<const ParamVector> anchor, double s,
                             double base_variance)
    : anchor_(std::move(anchor)), s_(s), base_variance_(base_variance) {
  if (!anchor_ || anchor_->empty()) throw std::invalid_argument("anchor must be non-empty");
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("anchor scale s must lie in [0, 1]");
  if (!(base_variance > 0.0)) throw std::invalid_argument("prior variance must be positive");
}

std::size_t prior_dim(const Prior& prior) {
  return std::visit([](const auto& p) { return p.dim(); }, prior);
}

double prior_variance(const Prior& prior) {
  return std::visit([](const auto& p) { return p.variance(); }, prior);
}

double prior_mean(const Prior& prior, std::size_t i) {
  return std::visit([i](const auto& p) { return p.mean(i); }, prior);
}

ParamVector prior_mean_vector(const Prior& prior) {
  ParamVector m(prior_dim(prior));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = prior_mean(prior, i);
  return m;
}

namespace {

// log N(theta; mean, var Id) and, optionally, adds scale * grad into grad.
double gaussian_term(const Prior& prior, std::span<const double> theta, std::span<double> grad,
                     double scale) {
  const double var = prior_variance(prior);
  if (!(var > 0.0)) throw std::domain_error("degenerate (s = 0) prior has no density");
  const std::size_t d = theta.size();
  double sq = 0.0;
  if (const auto* anchored = std::get_if<AnchoredPrior>(&prior); anchored && anchored->alpha() > 0) {
    const ParamVector& a = anchored->anchor();
    for (std::size_t i = 0; i < d; ++i) {
      const double r = theta[i] - a[i];
      sq += r * r;
      if (!grad.empty()) grad[i] -= scale * r / var;
    }
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      sq += theta[i] * theta[i];
      if (!grad.empty()) grad[i] -= scale * theta[i] / var;
    }
  }
  return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var;
}

}  // namespace

double prior_log_density(const Prior& prior, std::span<const double> theta) {
  if (theta.size() != prior_dim(prior)) throw std::invalid_argument("dimension mismatch");
  return gaussian_term(prior, theta, {}, 0.0);
}

TargetDensity::TargetDensity(std::shared_ptr<const Likelihood> likelihood, Prior prior,
                             double lambda, double temperature)
    : likelihood_(std::move(likelihood)), prior_(std::move(prior)), lambda_(lambda),
      temperature_(temperature) {
  if (!likelihood_) throw std::invalid_argument("likelihood is required");
  if (likelihood_->dim != prior_dim(prior_))
    throw std::invalid_argument("likelihood and prior dimensions differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

void TargetDensity::check_dim(std::span<const double> theta) const {
  if (theta.size() != dim())
    throw std::invalid_argument("parameter dimension " + std::to_string(theta.size()) +
                                " does not match target dimension " + std::to_string(dim()));
}

Evaluation TargetDensity::evaluate(std::span<const double> theta) const {
  check_dim(theta);
  Evaluation e;
  e.log_likelihood = lambda_ > 0.0 ? likelihood_->value(theta) : 0.0;
  if (!std::isfinite(e.log_likelihood)) throw NonFiniteError("non-finite log-likelihood");
  e.log_prior = gaussian_term(prior_, theta, {}, 0.0);
  e.log_density = (lambda_ * e.log_likelihood + e.log_prior) / temperature_;
  return e;
}

Evaluation TargetDensity::evaluate(std::span<const double> theta, std::span<double> grad) const {
  check_dim(theta);
  if (grad.size() != theta.size()) throw std::invalid_argument("gradient buffer size mismatch");
  Evaluation e;
  if (lambda_ > 0.0) {
    e.log_likelihood = likelihood_->value_and_grad(theta, grad);
    if (!std::isfinite(e.log_likelihood) || !all_finite(grad))
      throw NonFiniteError("non-finite log-likelihood or gradient");
    const double scale = lambda_ / temperature_;
    for (double& g : grad) g *= scale;
  } else {
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  e.log_prior = gaussian_term(prior_, theta, grad, 1.0 / temperature_);
  e.log_density = (lambda_ * e.log_likelihood + e.log_prior) / temperature_;
  return e;
}

Evaluation TargetDensity::evaluate_all(std::span<const double> theta, std::span<double> grad,
                                       std::span<double> grad_log_likelihood) const {
  check_dim(theta);
  if (grad_log_likelihood.size() != theta.size())
    throw std::invalid_argument("gradient buffer size mismatch");
  const double ll = likelihood_->value_and_grad(theta, grad_log_likelihood);
  if (!std::isfinite(ll) || !all_finite(grad_log_likelihood))
    throw NonFiniteError("non-finite log-likelihood or gradient");
  return combine(theta, ll, grad_log_likelihood, grad);
}

Evaluation TargetDensity::combine(std::span<const double> theta, double log_likelihood,
                                  std::span<const double> grad_log_likelihood,
                                  std::span<double> grad) const {
  check_dim(theta);
  if (grad.size() != theta.size() || grad_log_likelihood.size() != theta.size())
    throw std::invalid_argument("gradient buffer size mismatch");
  const double scale = lambda_ / temperature_;
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = scale * grad_log_likelihood[i];
  Evaluation e;
  e.log_likelihood = log_likelihood;
  e.log_prior = gaussian_term(prior_, theta, grad, 1.0 / temperature_);
  e.log_density = (lambda_ * e.log_likelihood + e.log_prior) / temperature_;
  return e;
}

double TargetDensity::log_density(std::span<const double> theta) const {
  return evaluate(theta).log_density;
}

ParamVector TargetDensity::grad_log_density(std::span<const double> theta) const {
  ParamVector g(theta.size());
  evaluate(theta, g);
  return g;
}

ParamVector TargetDensity::sample_reference(Rng& rng) const {
  const double sd = std::sqrt(effective_prior_variance());
  ParamVector theta(dim());
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta[i] = prior_mean(prior_, i) + sd * standard_normal(rng);
  return theta;
}

TargetDensity TargetDensity::with_lambda(double lambda) const {
  return TargetDensity(likelihood_, prior_, lambda, temperature_);
}

TargetDensity make_anchored(const TargetDensity& posterior, const ParamVector& theta_map,
                            double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("anchor scale s must lie in [0, 1]");
  const auto* base = std::get_if<GaussianPrior>(&posterior.prior());
  if (base == nullptr) throw std::invalid_argument("posterior must carry a N(0, v Id) prior");
  if (theta_map.size() != posterior.dim()) throw std::invalid_argument("anchor dimension mismatch");
  AnchoredPrior anchored(std::make_shared<const ParamVector>(theta_map), s, base->variance());
  return TargetDensity(posterior.likelihood_ptr(), anchored, posterior.lambda(),
                       posterior.temperature());
}

TargetDensity make_cold(const TargetDensity& posterior, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  return TargetDensity(posterior.likelihood_ptr(), posterior.prior(), posterior.lambda(),
                       temperature);
}

}  // namespace sbmc
