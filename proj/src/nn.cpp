#include "sbmc/nn.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace sbmc {

NetworkSpec NetworkSpec::mlp(std::vector<std::size_t> widths) {
  NetworkSpec s;
  s.arch = Architecture::mlp;
  s.widths = std::move(widths);
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::cnn(std::size_t height, std::size_t width, std::size_t channels,
                             std::size_t classes, std::size_t conv_channels, std::size_t kernel) {
  NetworkSpec s;
  s.arch = Architecture::cnn;
  s.height = height;
  s.width = width;
  s.channels = channels;
  s.num_classes = classes;
  s.conv_channels = conv_channels;
  s.kernel = kernel;
  s.validate();
  return s;
}

void NetworkSpec::validate() const {
  if (arch == Architecture::mlp) {
    if (widths.size() < 2) throw std::invalid_argument("MLP needs at least input and output widths");
    for (auto w : widths)
      if (w == 0) throw std::invalid_argument("MLP layer widths must be positive");
  } else {
    if (height < 2 || width < 2 || channels == 0 || conv_channels == 0)
      throw std::invalid_argument("CNN shape must be at least 2x2 with positive channels");
    if (kernel % 2 == 0) throw std::invalid_argument("CNN kernel size must be odd");
  }
  if (classes() < 2) throw std::invalid_argument("classifier needs at least two classes");
}

std::size_t NetworkSpec::input_dim() const {
  return arch == Architecture::mlp ? widths.front() : height * width * channels;
}

std::size_t NetworkSpec::classes() const {
  return arch == Architecture::mlp ? widths.back() : num_classes;
}

std::size_t NetworkSpec::param_count() const {
  if (arch == Architecture::mlp) {
    std::size_t d = 0;
    for (std::size_t i = 1; i < widths.size(); ++i) d += widths[i] * widths[i - 1] + widths[i];
    return d;
  }
  const std::size_t conv = conv_channels * channels * kernel * kernel + conv_channels;
  const std::size_t pooled = conv_channels * (height / 2) * (width / 2);
  return conv + num_classes * pooled + num_classes;
}

void Dataset::push_back(std::span<const double> x, int label) {
  if (input_dim == 0) input_dim = x.size();
  if (x.size() != input_dim) throw std::invalid_argument("input shape mismatch");
  inputs.insert(inputs.end(), x.begin(), x.end());
  labels.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.input_dim = input_dim;
  out.split = split;
  out.name = name;
  out.inputs.reserve(indices.size() * input_dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("dataset index out of range");
    out.push_back(input(i), labels[i]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

void Dataset::append(const Dataset& other) {
  if (other.size() == 0) return;
  if (size() == 0) input_dim = other.input_dim;
  if (other.input_dim != input_dim) throw std::invalid_argument("input shape mismatch");
  inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

struct Network::Workspace {
  // MLP: z[l] pre-activations, a[l] activations (a[0] is the input copy).
  std::vector<std::vector<double>> z, a, delta;
  // CNN
  std::vector<double> padded, conv, pooled, dpooled, dconv;
  std::vector<std::size_t> argmax;
  std::vector<double> logits, probs;
};

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  param_count_ = spec_.param_count();
}

namespace {

void check_theta(std::span<const double> theta, std::size_t d) {
  if (theta.size() != d)
    throw std::invalid_argument("parameter vector has length " + std::to_string(theta.size()) +
                                ", network expects " + std::to_string(d));
}

void softmax_into(const std::vector<double>& logits, std::vector<double>& probs) {
  probs.resize(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - m);
    s += probs[k];
  }
  for (double& p : probs) p /= s;
}

}  // namespace

void Network::mlp_forward(std::span<const double> theta, std::span<const double> x,
                          Workspace& ws) const {
  const auto& w = spec_.widths;
  const std::size_t layers = w.size() - 1;
  ws.z.resize(layers + 1);
  ws.a.resize(layers + 1);
  ws.a[0].assign(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::size_t nin = w[l - 1], nout = w[l];
    const double* A = theta.data() + off;
    const double* b = A + nout * nin;
    off += nout * nin + nout;
    auto& z = ws.z[l];
    z.resize(nout);
    const double* in = ws.a[l - 1].data();
    for (std::size_t o = 0; o < nout; ++o) {
      const double* row = A + o * nin;
      double s = b[o];
      for (std::size_t i = 0; i < nin; ++i) s += row[i] * in[i];
      z[o] = s;
    }
    auto& a = ws.a[l];
    a.resize(nout);
    if (l < layers) {
      for (std::size_t o = 0; o < nout; ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
    } else {
      a = z;
    }
  }
  ws.logits = ws.z[layers];
}

void Network::mlp_backward(std::span<const double> theta, std::span<double> grad,
                           Workspace& ws) const {
  const auto& w = spec_.widths;
  const std::size_t layers = w.size() - 1;
  ws.delta.resize(layers + 1);
  // Offsets of each layer's block.
  std::vector<std::size_t> offs(layers + 1, 0);
  for (std::size_t l = 2; l <= layers; ++l) offs[l] = offs[l - 1] + w[l - 1] * w[l - 2] + w[l - 1];
  // delta[layers] already holds dlogL/dlogits.
  for (std::size_t l = layers; l >= 1; --l) {
    const std::size_t nin = w[l - 1], nout = w[l];
    const double* A = theta.data() + offs[l];
    double* gA = grad.data() + offs[l];
    double* gb = gA + nout * nin;
    const auto& d = ws.delta[l];
    const double* in = ws.a[l - 1].data();
    for (std::size_t o = 0; o < nout; ++o) {
      const double dv = d[o];
      if (dv == 0.0) continue;
      double* grow = gA + o * nin;
      for (std::size_t i = 0; i < nin; ++i) grow[i] += dv * in[i];
      gb[o] += dv;
    }
    if (l > 1) {
      auto& prev = ws.delta[l - 1];
      prev.assign(nin, 0.0);
      for (std::size_t o = 0; o < nout; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* row = A + o * nin;
        for (std::size_t i = 0; i < nin; ++i) prev[i] += row[i] * dv;
      }
      const auto& zp = ws.z[l - 1];
      for (std::size_t i = 0; i < nin; ++i)
        if (zp[i] <= 0.0) prev[i] = 0.0;
    }
  }
}

void Network::cnn_forward(std::span<const double> theta, std::span<const double> x,
                          Workspace& ws) const {
  const std::size_t H = spec_.height, W = spec_.width, C = spec_.channels;
  const std::size_t F = spec_.conv_channels, k = spec_.kernel, pad = k / 2;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  const std::size_t HP = H / 2, WP = W / 2, K = spec_.num_classes;

  ws.padded.assign(C * PH * PW, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      std::copy_n(x.data() + (c * H + y) * W, W, ws.padded.data() + (c * PH + y + pad) * PW + pad);

  const double* cw = theta.data();
  const double* cb = cw + F * C * k * k;
  ws.conv.resize(F * H * W);
  for (std::size_t f = 0; f < F; ++f) {
    double* out = ws.conv.data() + f * H * W;
    std::fill(out, out + H * W, cb[f]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* img = ws.padded.data() + c * PH * PW;
      const double* kern = cw + (f * C + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = kern[ky * k + kx];
          for (std::size_t y = 0; y < H; ++y) {
            const double* src = img + (y + ky) * PW + kx;
            double* dst = out + y * W;
            for (std::size_t xx = 0; xx < W; ++xx) dst[xx] += wv * src[xx];
          }
        }
    }
  }

  // ReLU then 2x2 max-pool; ties go to the first index in row-major order.
  ws.pooled.resize(F * HP * WP);
  ws.argmax.resize(F * HP * WP);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t py = 0; py < HP; ++py)
      for (std::size_t px = 0; px < WP; ++px) {
        std::size_t best = (f * H + 2 * py) * W + 2 * px;
        double bv = std::max(ws.conv[best], 0.0);
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (std::size_t c : cand) {
          const double v = std::max(ws.conv[c], 0.0);
          if (v > bv) {
            bv = v;
            best = c;
          }
        }
        const std::size_t o = (f * HP + py) * WP + px;
        ws.pooled[o] = bv;
        ws.argmax[o] = best;
      }

  const std::size_t n = F * HP * WP;
  const double* lw = cb + F;
  const double* lb = lw + K * n;
  ws.logits.resize(K);
  for (std::size_t c = 0; c < K; ++c) {
    const double* row = lw + c * n;
    double s = lb[c];
    for (std::size_t i = 0; i < n; ++i) s += row[i] * ws.pooled[i];
    ws.logits[c] = s;
  }
}

void Network::cnn_backward(std::span<const double> theta, std::span<double> grad,
                           Workspace& ws) const {
  const std::size_t H = spec_.height, W = spec_.width, C = spec_.channels;
  const std::size_t F = spec_.conv_channels, k = spec_.kernel, pad = k / 2;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  const std::size_t HP = H / 2, WP = W / 2, K = spec_.num_classes;
  const std::size_t n = F * HP * WP;

  const double* lw = theta.data() + F * C * k * k + F;
  double* gcw = grad.data();
  double* gcb = gcw + F * C * k * k;
  double* glw = gcb + F;
  double* glb = glw + K * n;
  const auto& dlog = ws.delta.back();

  ws.dpooled.assign(n, 0.0);
  for (std::size_t c = 0; c < K; ++c) {
    const double dv = dlog[c];
    const double* row = lw + c * n;
    double* grow = glw + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      grow[i] += dv * ws.pooled[i];
      ws.dpooled[i] += dv * row[i];
    }
    glb[c] += dv;
  }

  ws.dconv.assign(F * H * W, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = ws.argmax[i];
    if (ws.conv[src] > 0.0) ws.dconv[src] += ws.dpooled[i];
  }

  for (std::size_t f = 0; f < F; ++f) {
    const double* dz = ws.dconv.data() + f * H * W;
    double bsum = 0.0;
    for (std::size_t i = 0; i < H * W; ++i) bsum += dz[i];
    gcb[f] += bsum;
    for (std::size_t c = 0; c < C; ++c) {
      const double* img = ws.padded.data() + c * PH * PW;
      double* gk = gcw + (f * C + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double s = 0.0;
          for (std::size_t y = 0; y < H; ++y) {
            const double* src = img + (y + ky) * PW + kx;
            const double* d = dz + y * W;
            for (std::size_t xx = 0; xx < W; ++xx) s += d[xx] * src[xx];
          }
          gk[ky * k + kx] += s;
        }
    }
  }
}

double Network::item_loglik(std::span<const double> theta, std::span<const double> x, int label,
                            std::span<double> grad, Workspace& ws) const {
  const std::size_t K = classes();
  if (label < 0 || static_cast<std::size_t>(label) >= K)
    throw std::invalid_argument("log-likelihood requires labelled items with labels in [0, K)");
  if (spec_.arch == Architecture::mlp)
    mlp_forward(theta, x, ws);
  else
    cnn_forward(theta, x, ws);
  softmax_into(ws.logits, ws.probs);
  const double m = *std::max_element(ws.logits.begin(), ws.logits.end());
  double s = 0.0;
  for (double z : ws.logits) s += std::exp(z - m);
  const double ll = ws.logits[label] - m - std::log(s);
  if (!grad.empty()) {
    if (spec_.arch == Architecture::mlp) {
      ws.delta.resize(spec_.widths.size());
    } else {
      ws.delta.resize(1);
    }
    auto& d = ws.delta.back();
    d.resize(K);
    for (std::size_t c = 0; c < K; ++c) d[c] = -ws.probs[c];
    d[label] += 1.0;
    if (spec_.arch == Architecture::mlp)
      mlp_backward(theta, grad, ws);
    else
      cnn_backward(theta, grad, ws);
  }
  return ll;
}

std::vector<double> Network::logits(std::span<const double> theta,
                                    std::span<const double> x) const {
  check_theta(theta, param_count_);
  if (x.size() != spec_.input_dim()) throw std::invalid_argument("input shape mismatch");
  Workspace ws;
  if (spec_.arch == Architecture::mlp)
    mlp_forward(theta, x, ws);
  else
    cnn_forward(theta, x, ws);
  return ws.logits;
}

std::vector<double> Network::forward(std::span<const double> theta,
                                     std::span<const double> x) const {
  std::vector<double> probs;
  softmax_into(logits(theta, x), probs);
  return probs;
}

std::vector<double> Network::predict(std::span<const double> theta, const Dataset& data) const {
  check_theta(theta, param_count_);
  if (data.size() > 0 && data.input_dim != spec_.input_dim())
    throw std::invalid_argument("input shape mismatch");
  const std::size_t K = classes();
  std::vector<double> out(data.size() * K);
  Workspace ws;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (spec_.arch == Architecture::mlp)
      mlp_forward(theta, data.input(i), ws);
    else
      cnn_forward(theta, data.input(i), ws);
    softmax_into(ws.logits, ws.probs);
    std::copy(ws.probs.begin(), ws.probs.end(), out.begin() + i * K);
  }
  return out;
}

double Network::log_likelihood(std::span<const double> theta, const Dataset& data,
                               std::span<const std::size_t> indices) const {
  check_theta(theta, param_count_);
  if (data.size() > 0 && data.input_dim != spec_.input_dim())
    throw std::invalid_argument("input shape mismatch");
  Workspace ws;
  double total = 0.0;
  const std::size_t n = indices.empty() ? data.size() : indices.size();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = indices.empty() ? j : indices[j];
    total += item_loglik(theta, data.input(i), data.labels[i], {}, ws);
  }
  return total;
}

double Network::log_likelihood_and_grad(std::span<const double> theta, const Dataset& data,
                                        std::span<double> grad,
                                        std::span<const std::size_t> indices) const {
  check_theta(theta, param_count_);
  if (grad.size() != param_count_) throw std::invalid_argument("gradient buffer size mismatch");
  if (data.size() > 0 && data.input_dim != spec_.input_dim())
    throw std::invalid_argument("input shape mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  Workspace ws;
  double total = 0.0;
  const std::size_t n = indices.empty() ? data.size() : indices.size();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = indices.empty() ? j : indices[j];
    total += item_loglik(theta, data.input(i), data.labels[i], grad, ws);
  }
  return total;
}

ParamVector Network::initialize(double variance, Rng& rng) const {
  const double sd = std::sqrt(variance);
  ParamVector theta(param_count_);
  for (double& t : theta) t = sd * standard_normal(rng);
  return theta;
}

std::shared_ptr<const Likelihood> make_likelihood(std::shared_ptr<const Network> network,
                                                  std::shared_ptr<const Dataset> data) {
  auto lik = std::make_shared<Likelihood>();
  lik->dim = network->param_count();
  lik->value = [network, data](std::span<const double> theta) {
    return network->log_likelihood(theta, *data);
  };
  lik->value_and_grad = [network, data](std::span<const double> theta, std::span<double> grad) {
    return network->log_likelihood_and_grad(theta, *data, grad);
  };
  return lik;
}

double mean_nll(const Network& network, std::span<const double> theta, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  return -network.log_likelihood(theta, data) / static_cast<double>(data.size());
}

double accuracy(const Network& network, std::span<const double> theta, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto probs = network.predict(theta, data);
  const std::size_t K = network.classes();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = probs.begin() + i * K;
    const auto best = std::max_element(row, row + K) - row;
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

MapResult map_optimize(const SgdProblem& problem, const GaussianPrior& prior, const OptConfig& cfg) {
  if (problem.items == 0) throw std::invalid_argument("training set is empty");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0)
    throw std::invalid_argument("batch size and max epochs must be positive");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  const std::size_t d = problem.dim;
  if (prior.dim() != d) throw std::invalid_argument("prior dimension does not match the model");

  Rng rng(derive_seed(cfg.seed, 0xA11CE, 0));
  ParamVector theta = problem.init(rng);
  if (theta.size() != d) throw std::invalid_argument("initial point has the wrong dimension");
  ParamVector velocity(d, 0.0), grad(d);
  const double m = static_cast<double>(problem.items);
  const double prior_scale = 1.0 / (prior.variance() * m);

  std::vector<std::size_t> order(problem.items);
  std::iota(order.begin(), order.end(), std::size_t{0});

  MapResult result;
  result.theta = theta;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  const bool monitor = static_cast<bool>(problem.validation_nll);
  const auto decay_epoch = static_cast<std::size_t>(cfg.decay_at * static_cast<double>(cfg.max_epochs));
  std::size_t since_best = 0;
  ParamVector last_finite = theta;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = epoch > decay_epoch ? cfg.learning_rate / 10.0 : cfg.learning_rate;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      const double ll = problem.batch_log_likelihood(theta, batch, grad);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      bool finite = std::isfinite(ll);
      for (std::size_t i = 0; i < d; ++i) {
        // Descent direction of the per-item negative log posterior.
        const double g = -grad[i] * inv_b + theta[i] * prior_scale;
        velocity[i] = cfg.momentum * velocity[i] + g;
        theta[i] -= lr * velocity[i];
        finite = finite && std::isfinite(theta[i]);
      }
      if (!finite)
        throw DivergenceError("SGD diverged in epoch " + std::to_string(epoch), last_finite, epoch);
    }
    last_finite = theta;
    result.epochs_used = epoch;

    if (!monitor) continue;
    const double nll = problem.validation_nll(theta);
    if (!std::isfinite(nll))
      throw DivergenceError("validation NLL is not finite in epoch " + std::to_string(epoch),
                            last_finite, epoch);
    if (nll < result.best_val_nll) {
      result.best_val_nll = nll;
      result.best_epoch = epoch;
      result.theta = theta;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (!monitor) {
    result.theta = theta;
    result.best_epoch = result.epochs_used;
    result.best_val_nll = 0.0;
  }
  return result;
}

MapResult map_estimate(const Network& network, const GaussianPrior& prior, const Dataset& train,
                       const Dataset& val, const OptConfig& cfg) {
  SgdProblem problem;
  problem.dim = network.param_count();
  problem.items = train.size();
  problem.init = [&](Rng& rng) { return network.initialize(prior.variance(), rng); };
  problem.batch_log_likelihood = [&](std::span<const double> theta,
                                     std::span<const std::size_t> batch, std::span<double> grad) {
    return network.log_likelihood_and_grad(theta, train, grad, batch);
  };
  if (val.size() > 0)
    problem.validation_nll = [&](std::span<const double> theta) { return mean_nll(network, theta, val); };
  return map_optimize(problem, prior, cfg);
}

std::vector<MapResult> deep_ensemble(const Network& network, const GaussianPrior& prior,
                                     const Dataset& train, const Dataset& val,
                                     const OptConfig& cfg, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("ensemble needs at least one member");
  std::vector<MapResult> members;
  members.reserve(seeds.size());
  for (auto seed : seeds) {
    OptConfig member = cfg;
    member.seed = seed;
    try {
      members.push_back(map_estimate(network, prior, train, val, member));
    } catch (const std::exception& e) {
      throw std::runtime_error("deep ensemble member with seed " + std::to_string(seed) +
                               " failed: " + e.what());
    }
  }
  return members;
}

}  // namespace sbmc
