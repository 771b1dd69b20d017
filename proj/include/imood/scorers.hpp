#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imood/matrix.hpp"
#include "imood/model.hpp"

namespace imood {

enum class ScorerVariant { bindisc, energy, msp, mahalanobis };

const char* scorer_name(ScorerVariant v) noexcept;
ScorerVariant scorer_from_name(const std::string& name);

struct AffineWrapper {
  double w = 1.0;
  double b = 0.0;
};

/// Which detector turns a forward pass into the ID/OOD logit. Every variant
/// except bindisc passes its raw score through an affine wrapper.
struct ScorerKind {
  ScorerVariant variant = ScorerVariant::bindisc;
  std::optional<AffineWrapper> wrapper;

  static ScorerKind bindisc() { return {ScorerVariant::bindisc, std::nullopt}; }
  static ScorerKind wrapped(ScorerVariant v, AffineWrapper w = {}) { return {v, w}; }
  /// Variant `v` with the wrapper scalars currently held in `params`.
  static ScorerKind from_params(ScorerVariant v, const ModelParams& params);

  /// bindisc must have no wrapper; every other variant must have one.
  void validate() const;
};

/// Per-class feature means with a shared, ridge-regularized covariance.
struct ClassStats {
  Matrix means;        // K x h
  Matrix cov;          // h x h pooled class-centred covariance
  Matrix cov_inverse;  // (cov + reg I)^-1
  double reg = 0.0;
  // Lower-triangular factor L with cov_inverse = L L^T. Squared distances are
  // ||L^T (z - mu)||^2, so features are whitened once per row.
  Matrix whitener;         // h x h, holds L
  Matrix whitened_means;   // K x h, rows mu_y^T L

  std::size_t num_classes() const noexcept { return means.rows(); }
  std::size_t dim() const noexcept { return means.cols(); }
};

/// Builds a ClassStats from explicit means and covariance.
/// Throws NumericError if cov + reg I is not positive definite.
ClassStats make_class_stats(Matrix means, Matrix cov, double reg);

/// Pooled covariance with an absolute ridge `reg` > 0. Every class in
/// 0..num_classes-1 needs at least two rows; rows with negative labels are ignored.
ClassStats fit_class_stats(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                           double reg);

/// Same, with ridge = scale * trace(cov) / h (falling back to `scale` when the trace is 0).
ClassStats fit_class_stats_relative(const Matrix& features, std::span<const int> labels,
                                    std::size_t num_classes, double scale);

/// Stabilized log-sum-exp of the classifier logits (negative free energy).
double energy_score(std::span<const double> f_logits);

/// Largest softmax probability.
double msp_score(std::span<const double> f_logits);

/// -min_y sqrt((z - mu_y)^T S^-1 (z - mu_y)); larger means more in-distribution.
double mahalanobis_score(const ClassStats& stats, std::span<const double> feature);

/// Mahalanobis scores for every row of `features`, using the whitened form.
/// `nearest` (optional) receives the argmin class per row.
std::vector<double> mahalanobis_scores(const ClassStats& stats, const Matrix& features,
                                       std::vector<std::size_t>* nearest = nullptr);

/// The raw (pre-wrapper) score of row `row`.
double raw_score(ScorerVariant variant, const ForwardPass& pass, std::size_t row, const ClassStats* stats);

/// ID/OOD logit of row `row`: g for bindisc, w * raw + b otherwise.
/// Throws UsageError if mahalanobis is requested without stats.
double scorer_logit(const ScorerKind& kind, const ForwardPass& pass, std::size_t row,
                    const ClassStats* stats = nullptr);

/// Logits for every row of a forward pass.
std::vector<double> scorer_logits(const ScorerKind& kind, const ForwardPass& pass, const ClassStats* stats = nullptr);

}  // namespace imood
