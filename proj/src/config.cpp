#include "sbmc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sbmc {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("key '" + key + "': '" + v + "' is not a number");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("key '" + key + "': '" + v + "' is not a non-negative integer");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  return {
      {"data_dir", data_dir},
      {"arch", arch},
      {"hidden", hidden},
      {"v", fmt(v)},
      {"s", fmt(s)},
      {"T", fmt(T)},
      {"N", std::to_string(N)},
      {"P", std::to_string(P)},
      {"rho", fmt(rho)},
      {"eta", fmt(eta)},
      {"max_mutations", std::to_string(max_mutations)},
      {"method", method},
      {"kernel", kernel},
      {"eps", fmt(eps)},
      {"L", std::to_string(L)},
      {"beta", fmt(beta)},
      {"tune", tune ? "true" : "false"},
      {"steps", std::to_string(steps)},
      {"discard", fmt(discard)},
      {"max_epochs", std::to_string(max_epochs)},
      {"batch", std::to_string(batch)},
      {"lr", fmt(lr)},
      {"momentum", fmt(momentum)},
      {"patience", std::to_string(patience)},
      {"n_train", std::to_string(n_train)},
      {"n_val", std::to_string(n_val)},
      {"n_test", std::to_string(n_test)},
      {"n_ood", std::to_string(n_ood)},
      {"meta_id", std::to_string(meta_id)},
      {"meta_ood", std::to_string(meta_ood)},
      {"seed", std::to_string(seed)},
      {"threads", std::to_string(threads)},
      {"out", out},
  };
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_dir") data_dir = value;
  else if (key == "arch") arch = value;
  else if (key == "hidden") hidden = value;
  else if (key == "v") v = to_double(key, value);
  else if (key == "s") s = to_double(key, value);
  else if (key == "T") T = to_double(key, value);
  else if (key == "N") N = to_uint(key, value);
  else if (key == "P") P = to_uint(key, value);
  else if (key == "rho") rho = to_double(key, value);
  else if (key == "eta") eta = to_double(key, value);
  else if (key == "max_mutations") max_mutations = to_uint(key, value);
  else if (key == "method") method = value;
  else if (key == "kernel") kernel = value;
  else if (key == "eps") eps = to_double(key, value);
  else if (key == "L") L = to_uint(key, value);
  else if (key == "beta") beta = to_double(key, value);
  else if (key == "tune") tune = to_bool(key, value);
  else if (key == "steps") steps = to_uint(key, value);
  else if (key == "discard") discard = to_double(key, value);
  else if (key == "max_epochs") max_epochs = to_uint(key, value);
  else if (key == "batch") batch = to_uint(key, value);
  else if (key == "lr") lr = to_double(key, value);
  else if (key == "momentum") momentum = to_double(key, value);
  else if (key == "patience") patience = to_uint(key, value);
  else if (key == "n_train") n_train = to_uint(key, value);
  else if (key == "n_val") n_val = to_uint(key, value);
  else if (key == "n_test") n_test = to_uint(key, value);
  else if (key == "n_ood") n_ood = to_uint(key, value);
  else if (key == "meta_id") meta_id = to_uint(key, value);
  else if (key == "meta_ood") meta_ood = to_uint(key, value);
  else if (key == "seed") seed = to_uint(key, value);
  else if (key == "threads") threads = to_uint(key, value);
  else if (key == "out") out = value;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (arch != "cnn" && arch != "mlp") throw std::invalid_argument("arch must be cnn or mlp");
  if (method != "smc" && method != "mcmc") throw std::invalid_argument("method must be smc or mcmc");
  if (kernel != "hmc" && kernel != "pcn") throw std::invalid_argument("kernel must be hmc or pcn");
  if (!(v > 0.0)) throw std::invalid_argument("v must be positive");
  if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("s must lie in (0, 1]");
  if (!(T > 0.0)) throw std::invalid_argument("T must be positive");
  if (P == 0) throw std::invalid_argument("P must be at least 1");
  const IslandJob j = job();
  if (j.method == Method::smc)
    j.smc.validate();
  else
    j.mcmc.validate();
}

OptConfig RunConfig::opt() const {
  OptConfig o;
  o.learning_rate = lr;
  o.batch_size = batch;
  o.max_epochs = max_epochs;
  o.patience = patience;
  o.momentum = momentum;
  o.seed = seed;
  return o;
}

IslandJob RunConfig::job() const {
  IslandJob j;
  j.method = method == "mcmc" ? Method::mcmc : Method::smc;
  KernelConfig k;
  if (kernel == "pcn")
    k = PcnConfig{beta};
  else
    k = HmcConfig{eps, L};
  j.smc.particles = N;
  j.smc.rho = rho;
  j.smc.eta = eta;
  j.smc.max_mutations = max_mutations;
  j.smc.kernel = k;
  j.smc.adapt_step_size = tune;
  j.smc.threads = threads;
  j.mcmc.chains = N;
  j.mcmc.steps = steps;
  j.mcmc.kernel = k;
  j.mcmc.tune_step_size = tune;
  j.mcmc.discard_fraction = discard;
  j.mcmc.average_trajectory = discard > 0.0;
  j.mcmc.threads = threads;
  return j;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.entries()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sbmc
