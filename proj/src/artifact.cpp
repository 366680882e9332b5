#include "sbmc/artifact.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sbmc {

namespace {

constexpr const char* kMagic = "sbmc-artifact 1";
const char* const kReserved[] = {"rows", "dim", "sha256"};

void check_text(const std::string& s, bool is_key) {
  for (char c : s)
    if (c == '\n' || c == '\r' || (is_key && c == '='))
      throw std::invalid_argument("manifest entries may not contain newlines or '=' in keys");
  if (is_key && s.empty()) throw std::invalid_argument("empty manifest key");
}

std::string hexfloat(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("bad number '" + s + "' in manifest");
  return x;
}

std::vector<unsigned char> encode(const std::vector<ParamVector>& samples) {
  std::vector<unsigned char> out;
  for (const auto& row : samples)
    for (double x : row) {
      auto bits = std::bit_cast<std::uint64_t>(x);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  return out;
}

}  // namespace

void RunArtifact::set(const std::string& key, const std::string& value) {
  check_text(key, true);
  check_text(value, false);
  for (const char* r : kReserved)
    if (key == r) throw std::invalid_argument("manifest key '" + key + "' is reserved");
  manifest[key] = value;
}

void RunArtifact::set_double(const std::string& key, double value) { set(key, hexfloat(value)); }

void RunArtifact::set_doubles(const std::string& key, std::span<const double> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    s += hexfloat(values[i]);
  }
  set(key, s);
}

const std::string& RunArtifact::get(const std::string& key) const {
  const auto it = manifest.find(key);
  if (it == manifest.end()) throw std::out_of_range("manifest has no key '" + key + "'");
  return it->second;
}

double RunArtifact::get_double(const std::string& key) const { return parse_hexfloat(get(key)); }

std::vector<double> RunArtifact::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_hexfloat(item));
  return out;
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void save_artifact(const std::filesystem::path& path, const RunArtifact& a) {
  const std::size_t dim = a.samples.empty() ? 0 : a.samples.front().size();
  for (const auto& row : a.samples)
    if (row.size() != dim) throw std::invalid_argument("samples differ in dimension");
  const auto block = encode(a.samples);
  std::ostringstream head;
  head << kMagic << '\n';
  for (const auto& [k, v] : a.manifest) head << k << '=' << v << '\n';
  head << "rows=" << a.samples.size() << '\n'
       << "dim=" << dim << '\n'
       << "sha256=" << sha256_hex(block.data(), block.size()) << '\n'
       << "end\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

RunArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open artifact " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw ParseError(path.string() + ": not an sbmc artifact");
  RunArtifact a;
  std::size_t rows = 0, dim = 0;
  std::string hash;
  bool ended = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "end") {
      ended = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    const auto k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "rows") rows = std::stoull(v);
    else if (k == "dim") dim = std::stoull(v);
    else if (k == "sha256") hash = v;
    else a.manifest[k] = v;
  }
  if (!ended) throw ParseError(path.string() + ": manifest is missing its end line");
  std::vector<unsigned char> block(rows * dim * 8);
  in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()));
  if (static_cast<std::size_t>(in.gcount()) != block.size())
    throw ParseError(path.string() + ": samples block has " + std::to_string(in.gcount()) +
                     " bytes, expected " + std::to_string(block.size()));
  if (sha256_hex(block.data(), block.size()) != hash)
    throw ParseError(path.string() + ": samples hash mismatch");
  a.samples.assign(rows, ParamVector(dim));
  std::size_t off = 0;
  for (auto& row : a.samples)
    for (double& x : row) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t{block[off++]} << (8 * b);
      x = std::bit_cast<double>(bits);
    }
  return a;
}

}  // namespace sbmc
