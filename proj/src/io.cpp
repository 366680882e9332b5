#include "sbmc/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sbmc {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

// Whole file, decompressed when gzipped (zlib reads plain files unchanged).
std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw ParseError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw ParseError("read error in " + path.string());
  return out;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::filesystem::path& path) {
  if (off + 4 > b.size())
    throw ParseError(path.string() + ": truncated header at byte " + std::to_string(b.size()) +
                     ", expected at least " + std::to_string(off + 4) + " bytes");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(bytes, 4);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_bytes(images);
  const auto lb = read_bytes(labels);

  const auto im = read_be32(ib, 0, images);
  if (im != kImageMagic)
    throw ParseError(images.string() + ": bad magic " + hex32(im) + " at byte 0, expected " +
                     hex32(kImageMagic));
  const auto lm = read_be32(lb, 0, labels);
  if (lm != kLabelMagic)
    throw ParseError(labels.string() + ": bad magic " + hex32(lm) + " at byte 0, expected " +
                     hex32(kLabelMagic));

  const std::size_t n = read_be32(ib, 4, images);
  const std::size_t rows = read_be32(ib, 8, images);
  const std::size_t cols = read_be32(ib, 12, images);
  const std::size_t nl = read_be32(lb, 4, labels);
  if (n != nl)
    throw ParseError(labels.string() + ": label count " + std::to_string(nl) + " at byte 4 " +
                     "does not match image count " + std::to_string(n));

  const std::size_t pixels = rows * cols;
  const std::size_t want_i = 16 + n * pixels;
  if (ib.size() < want_i)
    throw ParseError(images.string() + ": truncated at byte " + std::to_string(ib.size()) +
                     ", expected " + std::to_string(want_i) + " bytes");
  const std::size_t want_l = 8 + n;
  if (lb.size() < want_l)
    throw ParseError(labels.string() + ": truncated at byte " + std::to_string(lb.size()) +
                     ", expected " + std::to_string(want_l) + " bytes");

  Dataset d;
  d.input_dim = pixels;
  d.inputs.resize(n * pixels);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n * pixels; ++i) d.inputs[i] = ib[16 + i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = lb[8 + i];
  d.name = images.filename().string();
  return d;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& data, std::size_t rows, std::size_t cols) {
  if (rows * cols != data.input_dim) throw std::invalid_argument("rows x cols must equal input_dim");
  std::ofstream io(images, std::ios::binary);
  std::ofstream lo(labels, std::ios::binary);
  if (!io || !lo) throw std::runtime_error("cannot open IDX output files");
  put_be32(io, kImageMagic);
  put_be32(io, static_cast<std::uint32_t>(data.size()));
  put_be32(io, static_cast<std::uint32_t>(rows));
  put_be32(io, static_cast<std::uint32_t>(cols));
  for (double v : data.inputs) {
    const double c = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    io.put(static_cast<char>(static_cast<unsigned char>(c)));
  }
  put_be32(lo, kLabelMagic);
  put_be32(lo, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lo.put(static_cast<char>(static_cast<unsigned char>(l)));
}

Dataset filter_max_label(const Dataset& data, int max_label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.labels[i] >= 0 && data.labels[i] <= max_label) idx.push_back(i);
  return data.subset(idx);
}

Dataset filter_labels(const Dataset& data, std::span<const int> keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (std::find(keep.begin(), keep.end(), data.labels[i]) != keep.end()) idx.push_back(i);
  return data.subset(idx);
}

Dataset make_ood(const Dataset& base, OodKind kind, const OodConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind), 0x00D));
  Dataset out;
  out.input_dim = base.input_dim;
  out.split = Split::ood;
  switch (kind) {
    case OodKind::heldout_classes: {
      Dataset held = filter_labels(base, cfg.heldout);
      if (held.size() <= cfg.offset)
        throw std::invalid_argument("no heldout-class items available for OOD generation");
      std::vector<std::size_t> idx;
      for (std::size_t i = cfg.offset; i < held.size() && idx.size() < cfg.count; ++i)
        idx.push_back(i);
      out = held.subset(idx);
      out.split = Split::ood;
      out.name = "heldout";
      break;
    }
    case OodKind::white_noise: {
      if (base.input_dim == 0) throw std::invalid_argument("white noise needs an input shape");
      out.inputs.resize(cfg.count * base.input_dim);
      for (double& v : out.inputs) v = uniform01(rng);
      out.labels.assign(cfg.count, Dataset::kUnlabeled);
      out.name = "white_noise";
      break;
    }
    case OodKind::perturbed: {
      if (base.size() <= cfg.offset) throw std::invalid_argument("no items available to perturb");
      const std::size_t stop = std::min(base.size(), cfg.offset + cfg.count);
      for (std::size_t i = cfg.offset; i < stop; ++i) {
        std::vector<double> x(base.input(i).begin(), base.input(i).end());
        for (double& v : x) v = std::clamp(v + cfg.noise_sd * standard_normal(rng), 0.0, 1.0);
        out.push_back(x, base.labels[i]);
      }
      out.name = "perturbed";
      break;
    }
  }
  return out;
}

Dataset load_csv_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file, expected a header");
  std::size_t header_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (header_cols < 2) throw ParseError(path.string() + ":1: header needs label and features");

  Dataset d;
  d.input_dim = header_cols - 1;
  d.name = path.filename().string();
  std::size_t lineno = 1;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    row.clear();
    std::size_t col = 0, start = 0;
    int label = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      const std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      ++col;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size())
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ":" + std::to_string(col) +
                         ": non-numeric cell '" + cell + "'");
      if (col == 1) {
        label = static_cast<int>(v);
        if (static_cast<double>(label) != v)
          throw ParseError(path.string() + ":" + std::to_string(lineno) + ":1: label must be an integer");
      } else {
        row.push_back(v);
      }
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (col != header_cols)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": ragged row with " +
                       std::to_string(col) + " cells, header has " + std::to_string(header_cols));
    d.push_back(row, label);
  }
  return d;
}

Mnist7 build_mnist7(const Dataset& train_file, const Dataset& test_file, const Mnist7Config& cfg) {
  Mnist7 m;
  const Dataset id_train = filter_max_label(train_file, 7);
  if (id_train.size() < cfg.n_train + cfg.n_val)
    throw std::invalid_argument("training file has only " + std::to_string(id_train.size()) +
                                " digits labelled 0..7");
  std::vector<std::size_t> idx(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i) idx[i] = i;
  m.train = id_train.subset(idx);
  m.train.split = Split::train;
  m.train.name = "train";
  idx.resize(cfg.n_val);
  for (std::size_t i = 0; i < cfg.n_val; ++i) idx[i] = cfg.n_train + i;
  m.validation = id_train.subset(idx);
  m.validation.split = Split::validation;
  m.validation.name = "validation";

  const Dataset id_test = filter_max_label(test_file, 7);
  if (id_test.size() <= cfg.test_offset) throw std::invalid_argument("test offset exceeds ID test pool");
  const std::size_t n_test = cfg.n_test == 0 ? id_test.size() - cfg.test_offset
                                             : std::min(cfg.n_test, id_test.size() - cfg.test_offset);
  idx.resize(n_test);
  for (std::size_t i = 0; i < n_test; ++i) idx[i] = cfg.test_offset + i;
  m.test = id_test.subset(idx);
  m.test.split = Split::test;
  m.test.name = "test";

  for (int digit : {8, 9}) {
    OodConfig oc;
    oc.count = cfg.n_ood_group;
    oc.heldout = {digit};
    oc.offset = cfg.ood_offset;
    Dataset g = make_ood(test_file, OodKind::heldout_classes, oc, cfg.ood_seed);
    g.name = "digit" + std::to_string(digit);
    m.ood.push_back(std::move(g));
  }
  OodConfig wn;
  wn.count = cfg.n_ood_group;
  m.ood.push_back(make_ood(test_file, OodKind::white_noise, wn, cfg.ood_seed + cfg.ood_offset));
  OodConfig pert;
  pert.count = cfg.n_ood_group;
  pert.offset = cfg.test_offset;
  m.ood.push_back(make_ood(id_test, OodKind::perturbed, pert, cfg.ood_seed + cfg.ood_offset));
  return m;
}

}  // namespace sbmc
