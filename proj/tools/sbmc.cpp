#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "sbmc/diagnostics.hpp"
#include "sbmc/pipeline.hpp"

using namespace sbmc;
namespace fs = std::filesystem;

namespace {

struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string upstream_command(const fs::path& artifact) {
  const auto name = artifact.filename().string();
  if (name == "map.art") return "map";
  if (name.rfind("island-", 0) == 0) return "sample";
  if (name == "combined.art") return "combine";
  if (name == "meta.art") return "meta";
  return "sample";
}

RunArtifact require_artifact(const fs::path& path) {
  if (!fs::exists(path))
    throw CommandError("missing " + path.string() + "; run `sbmc " + upstream_command(path) +
                       "` first");
  return load_artifact(path);
}

void write_resolved(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out);
  std::ofstream f(fs::path(cfg.out) / (command + ".config"));
  f << "# resolved configuration for `sbmc " << command << "`\n" << to_text(cfg);
}

std::shared_ptr<const Network> make_network(const RunConfig& cfg, const DataBundle& data) {
  return std::make_shared<const Network>(network_spec(cfg, data.train.input_dim, data.classes));
}

void check_dim(const RunArtifact& a, const Network& net, const fs::path& path) {
  if (a.samples.empty() || a.samples.front().size() != net.param_count())
    throw CommandError(path.string() + " holds " +
                       std::to_string(a.samples.empty() ? 0 : a.samples.front().size()) +
                       "-dimensional samples but the network has " +
                       std::to_string(net.param_count()) + " parameters");
}

std::vector<fs::path> island_files(const fs::path& out) {
  std::vector<std::pair<std::size_t, fs::path>> found;
  if (fs::exists(out))
    for (const auto& e : fs::directory_iterator(out)) {
      const auto name = e.path().filename().string();
      if (name.rfind("island-", 0) == 0 && e.path().extension() == ".art")
        found.emplace_back(std::stoull(name.substr(7)), e.path());
    }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> files;
  for (auto& [_, p] : found) files.push_back(p);
  return files;
}

int cmd_map(const RunConfig& cfg) {
  const auto data = load_data(cfg);
  const auto net = make_network(cfg, data);
  const GaussianPrior prior(cfg.v, net->param_count());
  const auto r = map_estimate(*net, prior, data.train, data.validation, cfg.opt());
  const fs::path path = fs::path(cfg.out) / "map.art";
  save_artifact(path, map_artifact(r, cfg));
  std::cout << "map: d=" << net->param_count() << " epochs=" << r.epochs_used
            << " best_epoch=" << r.best_epoch;
  if (data.test.size() > 0)
    std::cout << " test_accuracy=" << accuracy(*net, r.theta, data.test)
              << " test_nll=" << mean_nll(*net, r.theta, data.test);
  std::cout << "\nwrote " << path.string() << "\n";
  return 0;
}

int cmd_sample(const RunConfig& cfg) {
  const auto data = load_data(cfg);
  const auto net = make_network(cfg, data);
  const fs::path map_path = fs::path(cfg.out) / "map.art";
  std::optional<RunArtifact> map;
  if (fs::exists(map_path)) {
    map = load_artifact(map_path);
    check_dim(*map, *net, map_path);
  } else if (cfg.s < 1.0) {
    throw CommandError("missing " + map_path.string() + "; run `sbmc map` first (or set s = 1)");
  }
  const auto post = posterior(net, data.train, cfg.v);
  const auto target = sampling_target(post, map ? &map->samples.front() : nullptr, cfg);
  IslandJob job = cfg.job();
  const std::size_t inner = cfg.P > 1 ? 1 : cfg.threads;
  job.smc.threads = job.mcmc.threads = inner;
  for (const auto& f : island_files(cfg.out)) fs::remove(f);
  const auto rep = run_parallel(target, job, cfg.P, cfg.seed, cfg.threads);
  for (const auto& r : rep.results) {
    const fs::path path = fs::path(cfg.out) / ("island-" + std::to_string(r.island) + ".art");
    save_artifact(path, island_artifact(r, cfg));
    std::cout << "island " << r.island << ": log_z=" << r.log_z << " epochs=" << r.epochs
              << " acceptance=" << r.stats.acceptance_rate() << " step_size=" << r.step_size;
    if (r.method == Method::smc) std::cout << " tempering_steps=" << r.schedule.steps();
    std::cout << "\n";
    for (const auto& w : r.schedule.warnings) std::cerr << "island " << r.island << " warning: " << w << "\n";
  }
  for (const auto& f : rep.failures)
    std::cerr << "island " << f.island << " failed: " << f.message << "\n";
  return rep.results.empty() ? 1 : 0;
}

int cmd_combine(const RunConfig& cfg) {
  const auto files = island_files(cfg.out);
  if (files.empty())
    throw CommandError("no island artifacts in " + cfg.out + "; run `sbmc sample` first");
  std::vector<RunResult> results;
  for (const auto& f : files) results.push_back(island_from_artifact(load_artifact(f)));
  std::vector<double> log_z;
  for (const auto& r : results) log_z.push_back(r.log_z);
  const auto w = island_weights(log_z);
  const fs::path path = fs::path(cfg.out) / "combined.art";
  save_artifact(path, combined_artifact(results, w, cfg));
  CsvWriter csv(fs::path(cfg.out) / "combine.csv",
                {"island", "particles", "log_z", "weight", "epochs", "acceptance"});
  for (std::size_t p = 0; p < results.size(); ++p) {
    csv << results[p].island << results[p].samples.size() << results[p].log_z << w.weights[p]
        << results[p].epochs << results[p].stats.acceptance_rate();
    csv.end_row();
  }
  std::cout << "combined " << results.size() << " islands, effective islands "
            << w.effective_islands << "\nwrote " << path.string() << "\n";
  for (auto p : w.excluded) std::cerr << "island " << results[p].island << " excluded: non-finite log Z\n";
  return 0;
}

fs::path artifact_path(const RunConfig& cfg, const std::string& given) {
  return given.empty() ? fs::path(cfg.out) / "combined.art" : fs::path(given);
}

int cmd_evaluate(const RunConfig& cfg, const std::string& artifact) {
  const auto path = artifact_path(cfg, artifact);
  const auto a = require_artifact(path);
  const auto data = load_data(cfg);
  const auto net = make_network(cfg, data);
  check_dim(a, *net, path);
  if (data.test.size() == 0) throw CommandError("no ID test data to evaluate on");
  const auto rep = evaluate_posterior(*net, a.samples, sample_weights(a), data.test, data.ood,
                                      cfg.threads);
  CsvWriter csv(fs::path(cfg.out) / "evaluate.csv",
                {"split", "size", "accuracy", "nll", "brier", "ece", "h_tot", "h_al", "h_ep"});
  for (const auto& s : rep.splits) {
    csv << s.name << s.size << s.metrics.accuracy << s.metrics.nll << s.metrics.brier
        << s.metrics.ece << s.h_tot << s.h_al << s.h_ep;
    csv.end_row();
  }
  CsvWriter ent(fs::path(cfg.out) / "entropy.csv", {"group", "h_ep"});
  ent << std::string("correct_id") << rep.h_ep_correct;
  ent.end_row();
  ent << std::string("incorrect_id") << rep.h_ep_incorrect;
  ent.end_row();
  ent << std::string("ood") << rep.h_ep_ood;
  ent.end_row();
  const auto& t = rep.splits.front().metrics;
  std::cout << "samples=" << a.samples.size() << " accuracy=" << t.accuracy << " nll=" << t.nll
            << " brier=" << t.brier << " ece=" << t.ece << "\nh_ep correct=" << rep.h_ep_correct
            << " incorrect=" << rep.h_ep_incorrect << " ood=" << rep.h_ep_ood << "\n";
  return 0;
}

int cmd_meta(const RunConfig& cfg, const std::string& artifact) {
  const auto path = artifact_path(cfg, artifact);
  const auto a = require_artifact(path);
  const auto data = load_data(cfg);
  const auto net = make_network(cfg, data);
  check_dim(a, *net, path);
  const auto splits = load_meta_splits(cfg);
  const auto w = sample_weights(a);
  const auto train = meta_set(*net, a.samples, w, splits.train_id, splits.train_ood, cfg.threads);
  const auto test = meta_set(*net, a.samples, w, splits.test_id, splits.test_ood, cfg.threads);
  MetaConfig mc;
  mc.opt.seed = cfg.seed;
  const auto meta = train_meta(train.features, train.z, mc);
  const auto rep = meta_report(meta, test);

  RunArtifact m;
  for (const auto& [k, v] : cfg.entries()) m.set("config." + k, v);
  m.set("created", utc_timestamp());
  m.set("kind", "meta");
  m.set("hidden", std::to_string(meta.hidden()));
  m.set_doubles("standardizer.mean", meta.standardizer().mean);
  m.set_doubles("standardizer.sd", meta.standardizer().sd);
  m.samples.push_back(meta.theta());
  save_artifact(fs::path(cfg.out) / "meta.art", m);

  const auto& th = rep.thresholds;
  CsvWriter csv(fs::path(cfg.out) / "meta.csv", {"metric", "value"});
  const std::vector<std::pair<std::string, double>> rows = {
      {"auc_roc", th.auc},
      {"precision_at_0.5", th.at_half.precision},
      {"recall_at_0.5", th.at_half.recall},
      {"f1_at_0.5", th.at_half.f1},
      {"optimal_f1_threshold", th.best.threshold},
      {"optimal_f1_precision", th.best.precision},
      {"optimal_f1_recall", th.best.recall},
      {"optimal_f1", th.best.f1},
      {"never_abstain_accuracy", rep.never_abstain_accuracy},
      {"best_abstain_accuracy", rep.best.accuracy},
      {"best_abstain_threshold", rep.best.threshold},
      {"meta_train_rows", static_cast<double>(train.z.size())},
      {"meta_test_rows", static_cast<double>(test.z.size())},
  };
  for (const auto& [k, v] : rows) {
    csv << k << v;
    csv.end_row();
  }
  CsvWriter sweep(fs::path(cfg.out) / "abstention.csv", {"threshold", "accuracy", "abstentions"});
  for (const auto& p : rep.sweep) {
    sweep << p.threshold << p.accuracy << p.abstentions;
    sweep.end_row();
  }
  std::cout << "auc=" << th.auc << " f1@0.5=" << th.at_half.f1 << " optimal_f1=" << th.best.f1
            << " (tau=" << th.best.threshold << ")\nnever-abstain accuracy="
            << rep.never_abstain_accuracy << " best 2-level accuracy=" << rep.best.accuracy
            << " (tau=" << rep.best.threshold << ")\n";
  return 0;
}

int cmd_diag(const RunConfig& cfg, std::size_t chain_length, std::size_t burn_in, std::size_t lags) {
  const ToyConfig toy;
  const auto post = bimodal_toy(toy);
  const ParamVector map{bimodal_toy_map(toy)};
  MixingConfig mc;
  mc.steps = chain_length;
  mc.burn_in = burn_in;
  mc.acf_lags = lags;
  mc.seed = cfg.seed;
  const std::vector<double> s_grid{0.1, 0.3, 1.0}, t_grid{0.2, 0.5, 1.0};
  CsvWriter iact_csv(fs::path(cfg.out) / "iact.csv",
                     {"grid", "setting", "iact_theta", "iact_log_density", "acceptance", "step_size"});
  CsvWriter acf_csv(fs::path(cfg.out) / "acf.csv", {"grid", "setting", "lag", "acf"});
  for (auto [kind, grid, label] : {std::tuple{GridKind::anchor_scale, &s_grid, "s"},
                                   std::tuple{GridKind::temperature, &t_grid, "T"}}) {
    for (const auto& row : mixing_comparison(post, map, *grid, kind, mc)) {
      iact_csv << std::string(label) << row.setting << row.iact_coordinate << row.iact_log_density
               << row.acceptance << row.step_size;
      iact_csv.end_row();
      for (std::size_t l = 0; l < row.acf_coordinate.size(); ++l) {
        acf_csv << std::string(label) << row.setting << l << row.acf_coordinate[l];
        acf_csv.end_row();
      }
      std::cout << label << "=" << row.setting << " iact=" << row.iact_coordinate
                << " acceptance=" << row.acceptance << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sbmc: MAP-anchored Bayesian neural network sampling"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "key=value override, repeatable");
  const RunConfig defaults;
  std::map<std::string, std::string> flags;
  for (const auto& [k, v] : defaults.entries())
    app.add_option("--" + k, flags[k], "config key " + k + " (default " + v + ")")->group("Config keys");

  auto* map = app.add_subcommand("map", "train the MAP anchor");
  auto* sample = app.add_subcommand("sample", "run P sampler islands from the MAP anchor");
  auto* combine = app.add_subcommand("combine", "merge islands with evidence weights");
  auto* evaluate = app.add_subcommand("evaluate", "metrics and entropy report");
  auto* meta = app.add_subcommand("meta", "train and score the confidence meta-classifier");
  auto* diag = app.add_subcommand("diag", "ACF / IACT of the bimodal toy target");
  std::string artifact;
  for (auto* c : {evaluate, meta})
    c->add_option("--artifact", artifact, "samples artifact (default <out>/combined.art)");
  std::size_t chain_length = 100000, burn_in = 1000, lags = 50;
  diag->add_option("--chain-length", chain_length, "kept iterations per chain");
  diag->add_option("--burn-in", burn_in);
  diag->add_option("--lags", lags, "ACF lags written to acf.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_config(config_file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flags)
      if (app.count("--" + k) > 0) cfg.set(k, v);
    cfg.validate();

    const auto* cmd = app.get_subcommands().front();
    write_resolved(cfg, cmd->get_name());
    if (cmd == map) return cmd_map(cfg);
    if (cmd == sample) return cmd_sample(cfg);
    if (cmd == combine) return cmd_combine(cfg);
    if (cmd == evaluate) return cmd_evaluate(cfg, artifact);
    if (cmd == meta) return cmd_meta(cfg, artifact);
    return cmd_diag(cfg, chain_length, burn_in, lags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
