#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "sbmc/targets.hpp"

namespace sbmc::testing {

/// Normalized Gaussian likelihood l(theta) = sum_j ln N(y_j; theta_j, tau2).
inline std::shared_ptr<Likelihood> gaussian_likelihood(ParamVector y, double tau2) {
  auto lik = std::make_shared<Likelihood>();
  lik->dim = y.size();
  auto f = [y, tau2](std::span<const double> th, double* g) {
    double s = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double r = th[j] - y[j];
      s += -0.5 * r * r / tau2 - 0.5 * std::log(2.0 * std::numbers::pi * tau2);
      if (g) g[j] = -r / tau2;
    }
    return s;
  };
  lik->value = [f](std::span<const double> th) { return f(th, nullptr); };
  lik->value_and_grad = [f](std::span<const double> th, std::span<double> g) {
    return f(th, g.data());
  };
  return lik;
}

inline std::shared_ptr<Likelihood> constant_likelihood(double c, std::size_t dim) {
  auto lik = std::make_shared<Likelihood>();
  lik->dim = dim;
  lik->value = [c](std::span<const double>) { return c; };
  lik->value_and_grad = [c](std::span<const double>, std::span<double> g) {
    for (double& x : g) x = 0.0;
    return c;
  };
  return lik;
}

/// Conjugate posterior moments for gaussian_likelihood under N(0, v Id).
struct Conjugate {
  double mean_factor;
  double variance;
  /// ln of the evidence for one coordinate with observation y.
  static double log_evidence(double y, double tau2, double v) {
    return -0.5 * std::log(2.0 * std::numbers::pi * (tau2 + v)) - 0.5 * y * y / (tau2 + v);
  }
};

inline Conjugate conjugate(double tau2, double v) {
  return {v / (v + tau2), v * tau2 / (v + tau2)};
}

/// Central differences of f at theta.
inline ParamVector fd_gradient(const std::function<double(std::span<const double>)>& f,
                               ParamVector theta, double h) {
  ParamVector g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    theta[i] = t + h;
    const double up = f(theta);
    theta[i] = t - h;
    const double dn = f(theta);
    theta[i] = t;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

inline ParamVector random_vector(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, sd);
  ParamVector v(n);
  for (double& x : v) x = nd(gen);
  return v;
}

inline std::vector<double> ar1(double phi, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  x[0] = nd(gen) / std::sqrt(1.0 - phi * phi);
  for (std::size_t t = 1; t < n; ++t) x[t] = phi * x[t - 1] + nd(gen);
  return x;
}

inline double sample_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_variance(std::span<const double> x) {
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("sbmc-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace sbmc::testing
