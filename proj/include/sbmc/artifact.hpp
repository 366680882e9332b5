#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sbmc/common.hpp"

namespace sbmc {

/// One run's persisted output: a text manifest followed by the samples as
/// raw little-endian 64-bit floats, row-major. The manifest records a
/// SHA-256 of the samples block, checked on load.
///
///   sbmc-artifact 1
///   key=value            (sorted by key)
///   ...
///   rows=<n>
///   dim=<d>
///   sha256=<hex>
///   end
///   <n * d * 8 bytes>
struct RunArtifact {
  std::map<std::string, std::string> manifest;
  std::vector<ParamVector> samples;

  void set(const std::string& key, const std::string& value);
  /// Exact hexfloat encoding, so doubles round-trip bit for bit.
  void set_double(const std::string& key, double value);
  void set_doubles(const std::string& key, std::span<const double> values);

  bool has(const std::string& key) const { return manifest.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  bool operator==(const RunArtifact&) const = default;
};

std::string sha256_hex(const void* data, std::size_t size);

void save_artifact(const std::filesystem::path& path, const RunArtifact& artifact);
/// Throws ParseError on a malformed manifest, a short samples block, or a
/// hash mismatch.
RunArtifact load_artifact(const std::filesystem::path& path);

}  // namespace sbmc
