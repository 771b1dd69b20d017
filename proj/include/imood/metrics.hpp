#pragma once

#include <span>
#include <string>
#include <vector>

namespace imood {

/// Detector scores of the two test populations. Larger means more in-distribution.
struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

/// P(id > ood) + 0.5 P(id == ood) over all pairs, ID positive. O(n log n).
double auroc(const ScoreSet& s);

/// Average precision with ID as the positive class: sum over distinct
/// thresholds (descending) of (recall_k - recall_{k-1}) * precision_k.
double aupr(const ScoreSet& s);

/// Fraction of OOD scores >= lambda, where lambda is the largest value with
/// at least `tpr` of the ID scores >= lambda.
double fpr_at_tpr(const ScoreSet& s, double tpr = 0.95);

/// Threshold used by fpr_at_tpr.
double tpr_threshold(std::span<const double> id_scores, double tpr);

/// Mean over classes of the per-class error rate. Throws UsageError if a
/// class in 0..K-1 has no samples.
double ber(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes);

/// Per-class breakdown of detection errors at an OOD-anchored threshold.
struct ErrorHistogram {
  double threshold = 0.0;
  std::vector<std::size_t> wrong_id_by_class;   // ID rows scored below threshold, by true label
  std::vector<std::size_t> wrong_ood_by_class;  // OOD rows scored above threshold, by predicted class
};

/// Threshold = the smallest OOD score such that at least `ood_detect_rate`
/// of OOD scores are <= it.
ErrorHistogram error_stats(std::span<const double> id_scores, std::span<const int> id_labels,
                           std::span<const double> ood_scores, std::span<const int> ood_predictions,
                           std::size_t num_classes, double ood_detect_rate = 0.95);

struct MetricsReport {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  double ber = 0.0;
  double macro_acc = 0.0;
  ErrorHistogram error_hist;

  /// Canonical JSON text. Doubles are written in shortest round-trip form,
  /// so equal reports produce equal bytes.
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline bool operator==(const ErrorHistogram& a, const ErrorHistogram& b) {
  return a.threshold == b.threshold && a.wrong_id_by_class == b.wrong_id_by_class &&
         a.wrong_ood_by_class == b.wrong_ood_by_class;
}

}  // namespace imood
