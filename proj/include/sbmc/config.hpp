#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sbmc/ensemble.hpp"
#include "sbmc/nn.hpp"

namespace sbmc {

/// Flat key=value run configuration. Every key has a default; unknown keys
/// are rejected.
struct RunConfig {
  std::string data_dir = "data/mnist";
  std::string arch = "cnn";
  /// MLP hidden widths, comma separated (input and output widths implied).
  std::string hidden = "100";
  double v = 0.1;
  double s = 0.1;
  double T = 1.0;
  std::size_t N = 10;
  std::size_t P = 1;
  double rho = 0.5;
  double eta = 0.05;
  std::size_t max_mutations = 20;
  std::string method = "smc";
  std::string kernel = "hmc";
  double eps = 0.01;
  std::size_t L = 1;
  double beta = 0.1;
  bool tune = true;
  std::size_t steps = 160;
  double discard = 0.0;
  std::size_t max_epochs = 160;
  std::size_t batch = 64;
  double lr = 0.1;
  double momentum = 0.0;
  std::size_t patience = 10;
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  std::size_t n_test = 0;
  std::size_t n_ood = 500;
  /// Meta-classifier split sizes: ID digits and items per OOD group, each
  /// for meta-training and again (disjoint) for meta-testing.
  std::size_t meta_id = 2000;
  std::size_t meta_ood = 300;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out = "runs";

  /// Key/value pairs in a fixed order, every default expanded.
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// Sets one key from text; throws std::invalid_argument for unknown keys
  /// or unparsable values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  OptConfig opt() const;
  IslandJob job() const;
};

/// Parses `key = value` lines; '#' starts a comment. Errors name the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& cfg);

}  // namespace sbmc
