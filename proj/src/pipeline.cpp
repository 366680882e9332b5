#include "sbmc/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <limits>
#include <sstream>

namespace sbmc {

namespace {

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {"", ".gz"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw std::runtime_error("missing " + (dir / stem).string() + "[.gz]");
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const auto v = std::stoull(item, &pos);
    if (pos != item.size() || v == 0) throw std::invalid_argument("bad hidden width '" + item + "'");
    w.push_back(v);
  }
  return w;
}

void put_config(RunArtifact& a, const RunConfig& cfg) {
  for (const auto& [k, v] : cfg.entries()) a.set("config." + k, v);
  a.set("created", utc_timestamp());
}

std::string join_counts(std::span<const std::size_t> xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::vector<std::size_t> split_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

double mean_of(const std::vector<double>& x, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (auto i : idx) s += x[i];
  return s / static_cast<double>(idx.size());
}

bool fully_labeled(const Dataset& d, std::size_t classes) {
  for (int y : d.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) return false;
  return !d.labels.empty();
}

SplitSummary summarize(const PredictiveMatrix& m, const Dataset& d, EntropyReport& h) {
  SplitSummary s;
  s.name = d.name;
  s.size = d.size();
  h = entropy_decomposition(m);
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  s.h_tot = mean_of(h.total, all);
  s.h_al = mean_of(h.aleatoric, all);
  s.h_ep = mean_of(h.epistemic, all);
  if (fully_labeled(d, m.classes)) {
    s.metrics = metrics(m, d.labels);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.metrics = Metrics{nan, nan, nan, nan};
  }
  return s;
}

}  // namespace

Mnist7 load_mnist7(const std::filesystem::path& dir, const Mnist7Config& cfg) {
  const Dataset train = load_idx(find_file(dir, "train-images-idx3-ubyte"),
                                 find_file(dir, "train-labels-idx1-ubyte"));
  const Dataset test = load_idx(find_file(dir, "t10k-images-idx3-ubyte"),
                                find_file(dir, "t10k-labels-idx1-ubyte"));
  return build_mnist7(train, test, cfg);
}

namespace {

std::pair<Dataset, Dataset> halves(const Dataset& d) {
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < d.size(); ++i) (i < d.size() / 2 ? a : b).push_back(i);
  auto x = d.subset(a), y = d.subset(b);
  x.name = y.name = d.name;
  x.split = y.split = d.split;
  return {x, y};
}

std::vector<Dataset> csv_ood(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("ood", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Dataset> out;
  for (const auto& f : files) {
    Dataset d = load_csv_features(f);
    d.split = Split::ood;
    d.name = f.stem().string();
    out.push_back(std::move(d));
  }
  return out;
}

Dataset csv_split(const std::filesystem::path& path, Split split, const std::string& name) {
  Dataset d = load_csv_features(path);
  d.split = split;
  d.name = name;
  return d;
}

}  // namespace

DataBundle load_data(const RunConfig& cfg) {
  const std::filesystem::path dir = cfg.data_dir;
  DataBundle b;
  if (std::filesystem::exists(dir / "train.csv")) {
    b.csv = true;
    b.train = csv_split(dir / "train.csv", Split::train, "train");
    if (std::filesystem::exists(dir / "validation.csv"))
      b.validation = csv_split(dir / "validation.csv", Split::validation, "validation");
    if (std::filesystem::exists(dir / "test.csv"))
      b.test = csv_split(dir / "test.csv", Split::test, "test");
    b.ood = csv_ood(dir);
    int top = -1;
    for (int y : b.train.labels) top = std::max(top, y);
    if (top < 1) throw std::invalid_argument("train.csv needs at least two classes");
    b.classes = static_cast<std::size_t>(top) + 1;
    return b;
  }
  auto m = load_mnist7(dir, mnist7_config(cfg));
  b.train = std::move(m.train);
  b.validation = std::move(m.validation);
  b.test = std::move(m.test);
  b.ood = std::move(m.ood);
  b.classes = 8;
  return b;
}

MetaSplits load_meta_splits(const RunConfig& cfg) {
  const std::filesystem::path dir = cfg.data_dir;
  MetaSplits s;
  if (std::filesystem::exists(dir / "train.csv")) {
    if (!std::filesystem::exists(dir / "test.csv"))
      throw std::invalid_argument("meta needs " + (dir / "test.csv").string());
    std::tie(s.train_id, s.test_id) = halves(csv_split(dir / "test.csv", Split::test, "test"));
    for (const auto& d : csv_ood(dir)) {
      auto [a, b] = halves(d);
      s.train_ood.push_back(std::move(a));
      s.test_ood.push_back(std::move(b));
    }
    return s;
  }
  Mnist7Config mc = mnist7_config(cfg);
  mc.n_test = cfg.meta_id;
  mc.n_ood_group = cfg.meta_ood;
  auto a = load_mnist7(dir, mc);
  mc.test_offset = cfg.meta_id;
  mc.ood_offset = cfg.meta_ood;
  auto b = load_mnist7(dir, mc);
  if (b.test.size() < cfg.meta_id) throw std::invalid_argument("too few ID test digits for meta_id");
  for (const auto& d : b.ood)
    if (d.size() < cfg.meta_ood)
      throw std::invalid_argument("OOD group " + d.name + " has too few items for meta_ood");
  s.train_id = std::move(a.test);
  s.train_ood = std::move(a.ood);
  s.test_id = std::move(b.test);
  s.test_ood = std::move(b.ood);
  return s;
}

Mnist7Config mnist7_config(const RunConfig& cfg) {
  Mnist7Config m;
  m.n_train = cfg.n_train;
  m.n_val = cfg.n_val;
  m.n_test = cfg.n_test;
  m.n_ood_group = cfg.n_ood;
  return m;
}

NetworkSpec network_spec(const RunConfig& cfg, std::size_t input_dim, std::size_t classes) {
  if (cfg.arch == "cnn") {
    if (input_dim != 28 * 28) throw std::invalid_argument("the cnn architecture expects 28 x 28 inputs");
    return NetworkSpec::cnn(28, 28, 1, classes);
  }
  std::vector<std::size_t> widths{input_dim};
  for (auto w : parse_widths(cfg.hidden)) widths.push_back(w);
  widths.push_back(classes);
  return NetworkSpec::mlp(widths);
}

TargetDensity posterior(std::shared_ptr<const Network> network, const Dataset& train, double v) {
  const std::size_t d = network->param_count();
  auto lik = make_likelihood(std::move(network), std::make_shared<const Dataset>(train));
  return TargetDensity(lik, GaussianPrior(v, d));
}

TargetDensity sampling_target(const TargetDensity& post, const ParamVector* theta_map,
                              const RunConfig& cfg) {
  TargetDensity t = post;
  if (theta_map) {
    t = make_anchored(post, *theta_map, cfg.s);
  } else if (cfg.s != 1.0) {
    throw std::invalid_argument("s < 1 needs a MAP anchor");
  }
  return cfg.T == 1.0 ? t : make_cold(t, cfg.T);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunArtifact map_artifact(const MapResult& map, const RunConfig& cfg) {
  RunArtifact a;
  put_config(a, cfg);
  a.set("kind", "map");
  a.set("seed", std::to_string(cfg.seed));
  a.set("epochs", std::to_string(map.epochs_used));
  a.set("best_epoch", std::to_string(map.best_epoch));
  a.set_double("best_val_nll", map.best_val_nll);
  a.samples.push_back(map.theta);
  return a;
}

RunArtifact island_artifact(const RunResult& r, const RunConfig& cfg) {
  RunArtifact a;
  put_config(a, cfg);
  a.set("kind", "island");
  a.set("seed", std::to_string(cfg.seed));
  a.set("island", std::to_string(r.island));
  a.set("method", r.method == Method::smc ? "smc" : "mcmc");
  a.set_double("log_z", r.log_z);
  a.set_double("epochs", r.epochs);
  a.set_double("step_size", r.step_size);
  a.set_doubles("schedule.lambdas", r.schedule.lambdas);
  a.set_doubles("schedule.ess", r.schedule.ess);
  a.set("schedule.mutations", join_counts(r.schedule.mutations));
  a.set_doubles("schedule.acceptance", r.schedule.acceptance);
  a.set_doubles("schedule.step_sizes", r.schedule.step_sizes);
  a.set("schedule.adaptive", r.schedule.adaptive ? "true" : "false");
  std::string warn;
  for (const auto& w : r.schedule.warnings) warn += (warn.empty() ? "" : " | ") + w;
  a.set("schedule.warnings", warn);
  a.set("stats.proposals", std::to_string(r.stats.proposals));
  a.set("stats.acceptances", std::to_string(r.stats.acceptances));
  a.set("stats.divergences", std::to_string(r.stats.divergences));
  a.set("stats.evaluations", std::to_string(r.stats.evaluations));
  a.samples = r.samples;
  return a;
}

RunResult island_from_artifact(const RunArtifact& a) {
  if (!a.has("kind") || a.get("kind") != "island")
    throw std::invalid_argument("artifact is not an island run");
  RunResult r;
  r.island = std::stoull(a.get("island"));
  r.method = a.get("method") == "mcmc" ? Method::mcmc : Method::smc;
  r.log_z = a.get_double("log_z");
  r.epochs = a.get_double("epochs");
  r.step_size = a.get_double("step_size");
  r.schedule.lambdas = a.get_doubles("schedule.lambdas");
  r.schedule.ess = a.get_doubles("schedule.ess");
  r.schedule.mutations = split_counts(a.get("schedule.mutations"));
  r.schedule.acceptance = a.get_doubles("schedule.acceptance");
  r.schedule.step_sizes = a.get_doubles("schedule.step_sizes");
  r.schedule.adaptive = a.get("schedule.adaptive") == "true";
  r.stats.proposals = std::stoull(a.get("stats.proposals"));
  r.stats.acceptances = std::stoull(a.get("stats.acceptances"));
  r.stats.divergences = std::stoull(a.get("stats.divergences"));
  r.stats.evaluations = std::stoull(a.get("stats.evaluations"));
  r.samples = a.samples;
  return r;
}

RunArtifact combined_artifact(const std::vector<RunResult>& results, const IslandWeights& w,
                              const RunConfig& cfg) {
  RunArtifact a;
  put_config(a, cfg);
  a.set("kind", "combined");
  a.set("islands", std::to_string(results.size()));
  std::vector<double> log_z;
  double epochs = 0.0;
  for (const auto& r : results) {
    log_z.push_back(r.log_z);
    epochs += r.epochs;
  }
  a.set_doubles("log_z", log_z);
  a.set_doubles("island_weights", w.weights);
  a.set_double("effective_islands", w.effective_islands);
  a.set("excluded", join_counts(w.excluded));
  a.set_double("epochs", epochs);
  const auto pw = particle_weights(results, w);
  a.set_doubles("weights", pw);
  for (const auto& r : results)
    for (const auto& s : r.samples) a.samples.push_back(s);
  return a;
}

std::vector<double> sample_weights(const RunArtifact& a) {
  if (a.has("weights")) {
    auto w = a.get_doubles("weights");
    if (w.size() != a.samples.size())
      throw std::invalid_argument("artifact weights do not match its samples");
    return w;
  }
  return std::vector<double>(a.samples.size(), 1.0 / static_cast<double>(a.samples.size()));
}

EvalReport evaluate_posterior(const Network& network, const std::vector<ParamVector>& samples,
                              std::span<const double> weights, const Dataset& test,
                              const std::vector<Dataset>& ood, std::size_t threads) {
  const std::vector<double> w(weights.begin(), weights.end());
  EvalReport rep;
  EntropyReport h;
  const auto m = predictive(network, samples, w, test, threads);
  rep.splits.push_back(summarize(m, test, h));
  std::vector<std::size_t> correct, wrong;
  for (std::size_t i = 0; i < test.size(); ++i)
    (static_cast<int>(argmax(m.mean_row(i))) == test.labels[i] ? correct : wrong).push_back(i);
  rep.h_ep_correct = mean_of(h.epistemic, correct);
  rep.h_ep_incorrect = mean_of(h.epistemic, wrong);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : ood) {
    const auto mo = predictive(network, samples, w, d, threads);
    rep.splits.push_back(summarize(mo, d, h));
    for (double x : h.epistemic) sum += x;
    n += d.size();
  }
  rep.h_ep_ood = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

MetaSet meta_set(const Network& network, const std::vector<ParamVector>& samples,
                 std::span<const double> weights, const Dataset& id,
                 const std::vector<Dataset>& ood, std::size_t threads) {
  const std::vector<double> w(weights.begin(), weights.end());
  MetaSet set;
  const auto m = predictive(network, samples, w, id, threads);
  const auto f = features(m);
  for (std::size_t i = 0; i < id.size(); ++i) {
    set.features.push_back(f[i]);
    set.z.push_back(static_cast<int>(argmax(m.mean_row(i))) == id.labels[i] ? 0 : 1);
  }
  for (const auto& d : ood) {
    const auto fo = features(predictive(network, samples, w, d, threads));
    for (const auto& x : fo) {
      set.features.push_back(x);
      set.z.push_back(1);
    }
  }
  return set;
}

MetaReport meta_report(const MetaClassifier& meta, const MetaSet& test) {
  MetaReport rep;
  const auto scores = meta.scores(test.features);
  rep.thresholds = threshold_metrics(scores, test.z);
  rep.best.accuracy = -1.0;
  for (int k = 0; k <= 100; ++k) {
    const double tau = k / 100.0;
    const auto r = abstain_2level(scores, test.z, tau);
    AbstentionPoint p{tau, r.accuracy, r.abstentions};
    rep.sweep.push_back(p);
    if (p.accuracy > rep.best.accuracy) rep.best = p;
  }
  const auto never = abstain_2level(scores, test.z, 2.0);
  rep.never_abstain_accuracy = never.accuracy;
  rep.sweep.push_back({2.0, never.accuracy, never.abstentions});
  if (never.accuracy > rep.best.accuracy) rep.best = rep.sweep.back();
  return rep;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : columns_(header.size()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path);
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

CsvWriter& CsvWriter::operator<<(const std::string& cell) {
  if (cell_ == columns_) throw std::logic_error("CSV row has too many cells");
  out_ << (cell_++ ? "," : "") << cell;
  return *this;
}

CsvWriter& CsvWriter::operator<<(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return *this << std::string(buf, r.ptr);
}

CsvWriter& CsvWriter::operator<<(std::size_t x) { return *this << std::to_string(x); }

void CsvWriter::end_row() {
  if (cell_ != columns_) throw std::logic_error("CSV row has too few cells");
  out_ << '\n';
  cell_ = 0;
}

}  // namespace sbmc
