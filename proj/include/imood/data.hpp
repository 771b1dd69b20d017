#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imood/matrix.hpp"

namespace imood {

inline constexpr int kOodLabel = -1;

enum class Split { id_train, id_test, ood_train, ood_test };

const char* split_name(Split s) noexcept;
Split split_from_name(const std::string& name);
inline bool is_ood(Split s) noexcept { return s == Split::ood_train || s == Split::ood_test; }

/// Feature rows with integer labels; OOD rows carry kOodLabel.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> class_counts;
  Split split = Split::id_train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_counts.size(); }

  /// Throws SpecError if any invariant is broken.
  void validate() const;
};

/// Recounts labels >= 0 into `num_classes` buckets.
std::vector<std::size_t> count_classes(const std::vector<int>& labels, std::size_t num_classes);

/// Parameters of the synthetic long-tailed Gaussian-cluster benchmark.
struct LongTailSpec {
  std::size_t num_classes = 10;
  std::size_t dim = 2;
  std::size_t n_max = 1000;
  double rho = 100.0;
  std::uint64_t seed = 0;
  double cluster_radius = 5.0;
  double cluster_spread = 1.0;

  void validate() const;
};

/// n_y = round(n_max * rho^(-y / (K - 1))).
std::vector<std::size_t> longtail_counts(const LongTailSpec& spec);

/// Cluster centres (K x d). Equally spaced on a circle for d = 2, otherwise
/// on random orthonormal directions (random unit directions once K > d).
Matrix cluster_means(const LongTailSpec& spec);

/// The long-tailed ID training split.
LabeledDataset synth_longtail_id(const LongTailSpec& spec);

/// A class-balanced ID split drawn from the same clusters.
LabeledDataset synth_balanced_id(const LongTailSpec& spec, std::size_t per_class, std::uint64_t seed,
                                 Split split = Split::id_test);

enum class OodMode { ring, uniform_box };
const char* ood_mode_name(OodMode m) noexcept;
OodMode ood_mode_from_name(const std::string& name);

/// OOD rows. `ring` samples an annulus whose inner radius exceeds twice the
/// cluster radius, so every sample is farther than cluster_radius from every
/// cluster mean. `uniform_box` samples the ID support box (means +- 3 spread)
/// scaled by 1.5 about its centre, overlapping the ID clusters.
LabeledDataset synth_ood(const LongTailSpec& spec, std::size_t n, OodMode mode, std::uint64_t seed,
                         Split split = Split::ood_test);

/// CSV with header `f0,...,f{d-1},label`. Labels below -1 are rejected; the
/// range check against K happens later, where K is known.
LabeledDataset read_csv(const std::filesystem::path& path, Split split);
void write_csv(const LabeledDataset& data, const std::filesystem::path& path);

}  // namespace imood
