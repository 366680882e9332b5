#pragma once

#include <filesystem>

#include "sbmc/nn.hpp"

namespace sbmc {

/// Reads an IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian
/// headers, u8 payload). Gzipped files are detected by their magic bytes.
/// Pixels are scaled to [0, 1] by /255. Malformed input raises ParseError
/// naming the byte offset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes uncompressed IDX files; pixels are stored as round(255 x).
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& data, std::size_t rows, std::size_t cols);

/// Items with label <= max_label, keeping file order.
Dataset filter_max_label(const Dataset& data, int max_label);
/// Items whose label is in `keep`, keeping file order.
Dataset filter_labels(const Dataset& data, std::span<const int> keep);

enum class OodKind { heldout_classes, white_noise, perturbed };

struct OodConfig {
  std::size_t count = 500;
  /// Classes treated as out-of-domain for heldout_classes.
  std::vector<int> heldout = {8, 9};
  /// Per-pixel Gaussian noise standard deviation for perturbed.
  double noise_sd = 0.5;
  /// Number of items to skip in the source before taking `count`.
  std::size_t offset = 0;
};

/// heldout_classes: the first `count` items of `base` whose label is in
/// cfg.heldout (labels kept, marked OOD). white_noise: U[0,1] pixels, no
/// labels. perturbed: the first `count` items of `base` plus N(0, sd^2)
/// noise, clamped to [0, 1], labels kept.
Dataset make_ood(const Dataset& base, OodKind kind, const OodConfig& cfg, std::uint64_t seed);

/// CSV with header `label,f1,...,fk`; one item per row.
Dataset load_csv_features(const std::filesystem::path& path);

/// The MNIST7 experiment splits: train/validation from the first digits
/// labelled 0..7 of the training file, ID test digits 0..7, and the four
/// OOD groups (8s, 9s, white noise, perturbed ID).
struct Mnist7 {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::vector<Dataset> ood;
};

struct Mnist7Config {
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  /// 0 means every ID test digit.
  std::size_t n_test = 0;
  /// Items per OOD group.
  std::size_t n_ood_group = 500;
  /// Digits skipped in the ID test and heldout pools before taking items;
  /// lets meta-training and meta-testing use disjoint digits.
  std::size_t test_offset = 0;
  std::size_t ood_offset = 0;
  std::uint64_t ood_seed = 7;
};

Mnist7 build_mnist7(const Dataset& train_file, const Dataset& test_file, const Mnist7Config& cfg);

}  // namespace sbmc
