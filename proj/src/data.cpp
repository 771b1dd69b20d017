#include "imood/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "imood/error.hpp"

namespace imood {

const char* split_name(Split s) noexcept {
  switch (s) {
    case Split::id_train: return "id-train";
    case Split::id_test: return "id-test";
    case Split::ood_train: return "ood-train";
    case Split::ood_test: return "ood-test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  for (Split s : {Split::id_train, Split::id_test, Split::ood_train, Split::ood_test})
    if (name == split_name(s)) return s;
  throw SpecError("unknown split '" + name + "'");
}

const char* ood_mode_name(OodMode m) noexcept {
  return m == OodMode::ring ? "ring" : "uniform-box";
}

OodMode ood_mode_from_name(const std::string& name) {
  if (name == "ring") return OodMode::ring;
  if (name == "uniform-box") return OodMode::uniform_box;
  throw SpecError("unknown OOD mode '" + name + "'");
}

std::vector<std::size_t> count_classes(const std::vector<int>& labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels)
    if (y >= 0) {
      if (static_cast<std::size_t>(y) >= num_classes)
        throw SpecError("label " + std::to_string(y) + " outside 0.." + std::to_string(num_classes - 1));
      ++counts[static_cast<std::size_t>(y)];
    }
  return counts;
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw SpecError("dataset is empty");
  if (features.rows() != labels.size()) throw SpecError("features/labels row count mismatch");
  for (int y : labels) {
    if (is_ood(split) && y != kOodLabel) throw SpecError(std::string(split_name(split)) + " split holds an ID label");
    if (!is_ood(split) && y < 0) throw SpecError(std::string(split_name(split)) + " split holds an OOD label");
  }
  if (count_classes(labels, class_counts.size()) != class_counts)
    throw SpecError("class_counts disagree with labels");
}

void LongTailSpec::validate() const {
  if (num_classes < 2) throw SpecError("need at least 2 classes");
  if (dim < 1) throw SpecError("feature dimension must be >= 1");
  if (!(rho >= 1.0)) throw SpecError("imbalance ratio must be >= 1");
  if (n_max < num_classes) throw SpecError("n_max must be >= number of classes");
  if (!(cluster_radius > 0.0) || !(cluster_spread > 0.0)) throw SpecError("cluster radius and spread must be > 0");
}

std::vector<std::size_t> longtail_counts(const LongTailSpec& spec) {
  spec.validate();
  std::vector<std::size_t> counts(spec.num_classes);
  const double km1 = static_cast<double>(spec.num_classes - 1);
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    const double n = std::round(static_cast<double>(spec.n_max) * std::pow(spec.rho, -static_cast<double>(y) / km1));
    if (n < 1.0)
      throw SpecError("class " + std::to_string(y) + " rounds to zero samples; increase n_max");
    counts[y] = static_cast<std::size_t>(n);
  }
  return counts;
}

namespace {

// Stream derivation keeps the cluster layout independent from sampling seeds.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

void random_unit(std::mt19937_64& rng, std::span<double> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : out) {
      v = normal(rng);
      norm += v * v;
    }
  } while (norm < 1e-24);
  norm = std::sqrt(norm);
  for (double& v : out) v /= norm;
}

LabeledDataset sample_clusters(const LongTailSpec& spec, const std::vector<std::size_t>& counts,
                               std::uint64_t seed, Split split) {
  const Matrix means = cluster_means(spec);
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;

  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> normal(0.0, spec.cluster_spread);
  LabeledDataset out;
  out.features = Matrix(total, spec.dim);
  out.labels.reserve(total);
  out.split = split;
  std::size_t row = 0;
  for (std::size_t y = 0; y < counts.size(); ++y)
    for (std::size_t i = 0; i < counts[y]; ++i, ++row) {
      for (std::size_t j = 0; j < spec.dim; ++j) out.features(row, j) = means(y, j) + normal(rng);
      out.labels.push_back(static_cast<int>(y));
    }
  out.class_counts = counts;
  return out;
}

}  // namespace

Matrix cluster_means(const LongTailSpec& spec) {
  spec.validate();
  const std::size_t k = spec.num_classes, d = spec.dim;
  Matrix means(k, d);
  if (d == 2) {
    for (std::size_t y = 0; y < k; ++y) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(y) / static_cast<double>(k);
      means(y, 0) = spec.cluster_radius * std::cos(angle);
      means(y, 1) = spec.cluster_radius * std::sin(angle);
    }
    return means;
  }
  auto rng = make_rng(spec.seed, 1);
  for (std::size_t y = 0; y < k; ++y) {
    auto r = means.row(y);
    random_unit(rng, r);
    if (y < d) {
      // Gram-Schmidt against the previous directions.
      for (std::size_t p = 0; p < y; ++p) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += r[j] * means(p, j) / spec.cluster_radius;
        for (std::size_t j = 0; j < d; ++j) r[j] -= dot * means(p, j) / spec.cluster_radius;
      }
      double norm = 0.0;
      for (double v : r) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : r) v /= norm;
    }
    for (double& v : r) v *= spec.cluster_radius;
  }
  return means;
}

LabeledDataset synth_longtail_id(const LongTailSpec& spec) {
  return sample_clusters(spec, longtail_counts(spec), spec.seed, Split::id_train);
}

LabeledDataset synth_balanced_id(const LongTailSpec& spec, std::size_t per_class, std::uint64_t seed,
                                 Split split) {
  if (per_class == 0) throw SpecError("per-class count must be >= 1");
  if (is_ood(split)) throw SpecError("balanced ID data cannot use an OOD split tag");
  return sample_clusters(spec, std::vector<std::size_t>(spec.num_classes, per_class), seed, split);
}

LabeledDataset synth_ood(const LongTailSpec& spec, std::size_t n, OodMode mode, std::uint64_t seed,
                         Split split) {
  if (n == 0) throw SpecError("OOD sample count must be >= 1");
  if (!is_ood(split)) throw SpecError("OOD data needs an OOD split tag");
  const Matrix means = cluster_means(spec);
  const std::size_t d = spec.dim;
  auto rng = make_rng(seed, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  LabeledDataset out;
  out.features = Matrix(n, d);
  out.labels.assign(n, kOodLabel);
  out.class_counts.assign(spec.num_classes, 0);
  out.split = split;

  if (mode == OodMode::ring) {
    const double inner = 1.1 * std::max(2.0 * spec.cluster_radius, spec.cluster_radius + 4.0 * spec.cluster_spread);
    const double outer = inner + spec.cluster_radius;
    std::vector<double> dir(d);
    for (std::size_t i = 0; i < n; ++i) {
      random_unit(rng, dir);
      const double r = inner + (outer - inner) * unit(rng);
      for (std::size_t j = 0; j < d; ++j) out.features(i, j) = r * dir[j];
    }
    return out;
  }

  std::vector<double> lo(d), hi(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mn = means(0, j), mx = means(0, j);
    for (std::size_t y = 1; y < means.rows(); ++y) {
      mn = std::min(mn, means(y, j));
      mx = std::max(mx, means(y, j));
    }
    const double centre = 0.5 * (mn + mx);
    const double half = 1.5 * (0.5 * (mx - mn) + 3.0 * spec.cluster_spread);
    lo[j] = centre - half;
    hi[j] = centre + half;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.features(i, j) = lo[j] + (hi[j] - lo[j]) * unit(rng);
  return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <typename T>
bool parse_cell(std::string_view cell, T& out) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && !cell.empty();
}

}  // namespace

LabeledDataset read_csv(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header.back() != "label") throw ParseError("header must be f0,...,f{d-1},label", 1);
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "f" + std::to_string(j)) throw ParseError("unexpected header column '" + std::string(header[j]) + "'", 1);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != d + 1)
      throw ParseError("expected " + std::to_string(d + 1) + " cells, found " + std::to_string(cells.size()), line_no);
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      if (!parse_cell(cells[j], v) || !std::isfinite(v))
        throw ParseError("non-numeric feature '" + std::string(cells[j]) + "'", line_no);
      values.push_back(v);
    }
    int label = 0;
    if (!parse_cell(cells[d], label)) throw ParseError("non-integer label '" + std::string(cells[d]) + "'", line_no);
    if (label < kOodLabel) throw ParseError("unknown label " + std::to_string(label), line_no);
    if (is_ood(split) && label != kOodLabel) throw ParseError("ID label in an OOD split", line_no);
    if (!is_ood(split) && label == kOodLabel) throw ParseError("OOD label in an ID split", line_no);
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError("empty dataset", line_no);

  LabeledDataset out;
  out.split = split;
  const int max_label = *std::max_element(labels.begin(), labels.end());
  out.features = Matrix(labels.size(), d, std::move(values));
  out.class_counts = count_classes(labels, static_cast<std::size_t>(std::max(max_label + 1, 0)));
  out.labels = std::move(labels);
  return out;
}

void write_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features(i, j));
      out << buf << ',';
    }
    out << data.labels[i] << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace imood
