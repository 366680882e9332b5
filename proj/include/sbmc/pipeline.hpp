#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "sbmc/artifact.hpp"
#include "sbmc/config.hpp"
#include "sbmc/io.hpp"
#include "sbmc/uq.hpp"

namespace sbmc {

/// Loads train-/t10k- images and labels (IDX, optionally .gz) from `dir`.
Mnist7 load_mnist7(const std::filesystem::path& dir, const Mnist7Config& cfg);
Mnist7Config mnist7_config(const RunConfig& cfg);

/// Train/validation/test plus OOD groups. When data_dir holds train.csv
/// the CSV feature files are used (validation.csv, test.csv and ood*.csv
/// optional); otherwise MNIST7.
struct DataBundle {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::vector<Dataset> ood;
  std::size_t classes = 0;
  bool csv = false;
};

DataBundle load_data(const RunConfig& cfg);

/// Disjoint meta-training and meta-testing pools.
struct MetaSplits {
  Dataset train_id;
  std::vector<Dataset> train_ood;
  Dataset test_id;
  std::vector<Dataset> test_ood;
};

/// MNIST7: meta_id ID digits and meta_ood items per OOD group for each side,
/// the test side offset past the training side. CSV: first and second half
/// of test.csv and of each OOD file.
MetaSplits load_meta_splits(const RunConfig& cfg);

/// The classifier for `cfg.arch`; the CNN expects 28 x 28 inputs.
NetworkSpec network_spec(const RunConfig& cfg, std::size_t input_dim, std::size_t classes);

/// Posterior for the training set under N(0, v Id).
TargetDensity posterior(std::shared_ptr<const Network> network, const Dataset& train, double v);

/// The target one island samples: the anchored posterior at cfg.s (or the
/// plain posterior when there is no MAP and s = 1), cooled by cfg.T.
TargetDensity sampling_target(const TargetDensity& posterior, const ParamVector* theta_map,
                              const RunConfig& cfg);

/// Manifest timestamp, UTC, ISO 8601.
std::string utc_timestamp();

RunArtifact map_artifact(const MapResult& map, const RunConfig& cfg);
RunArtifact island_artifact(const RunResult& r, const RunConfig& cfg);
RunResult island_from_artifact(const RunArtifact& a);
/// All islands' samples with their particle weights under the `weights` key.
RunArtifact combined_artifact(const std::vector<RunResult>& results, const IslandWeights& w,
                              const RunConfig& cfg);
/// The `weights` entry, or uniform weights when there is none.
std::vector<double> sample_weights(const RunArtifact& a);

struct SplitSummary {
  std::string name;
  std::size_t size = 0;
  /// NaN on unlabeled splits.
  Metrics metrics;
  double h_tot = 0.0;
  double h_al = 0.0;
  double h_ep = 0.0;
};

struct EvalReport {
  /// ID test first, then each OOD group.
  std::vector<SplitSummary> splits;
  double h_ep_correct = 0.0;
  double h_ep_incorrect = 0.0;
  /// Mean over every OOD input.
  double h_ep_ood = 0.0;
};

EvalReport evaluate_posterior(const Network& network, const std::vector<ParamVector>& samples,
                              std::span<const double> weights, const Dataset& test,
                              const std::vector<Dataset>& ood, std::size_t threads = 1);

/// Meta-classifier rows: z = 1 for misclassified ID inputs and every OOD input.
struct MetaSet {
  std::vector<FeatureVector> features;
  std::vector<int> z;
};

MetaSet meta_set(const Network& network, const std::vector<ParamVector>& samples,
                 std::span<const double> weights, const Dataset& id,
                 const std::vector<Dataset>& ood, std::size_t threads = 1);

struct AbstentionPoint {
  double threshold = 0.0;
  double accuracy = 0.0;
  std::size_t abstentions = 0;
};

struct MetaReport {
  ThresholdReport thresholds;
  std::vector<AbstentionPoint> sweep;
  /// Accuracy with tau above every score.
  double never_abstain_accuracy = 0.0;
  AbstentionPoint best;
};

/// Thresholds 0, 0.01, ..., 1 plus a never-abstain point.
MetaReport meta_report(const MetaClassifier& meta, const MetaSet& test);

/// Minimal CSV writer: header plus rows, doubles in shortest round-trip form.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& operator<<(const std::string& cell);
  CsvWriter& operator<<(double x);
  CsvWriter& operator<<(std::size_t x);
  void end_row();

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t cell_ = 0;
};

}  // namespace sbmc
