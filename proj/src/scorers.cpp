#include "imood/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imood/diffcore.hpp"
#include "imood/error.hpp"
#include "imood/kernels.hpp"

namespace imood {

const char* scorer_name(ScorerVariant v) noexcept {
  switch (v) {
    case ScorerVariant::bindisc: return "bindisc";
    case ScorerVariant::energy: return "energy";
    case ScorerVariant::msp: return "msp";
    case ScorerVariant::mahalanobis: return "mahalanobis";
  }
  return "?";
}

ScorerVariant scorer_from_name(const std::string& name) {
  for (ScorerVariant v : {ScorerVariant::bindisc, ScorerVariant::energy, ScorerVariant::msp, ScorerVariant::mahalanobis})
    if (name == scorer_name(v)) return v;
  throw SpecError("unknown scorer '" + name + "'");
}

ScorerKind ScorerKind::from_params(ScorerVariant v, const ModelParams& params) {
  if (v == ScorerVariant::bindisc) return bindisc();
  return wrapped(v, {params[ParamId::wrapper_w][0], params[ParamId::wrapper_b][0]});
}

void ScorerKind::validate() const {
  if (variant == ScorerVariant::bindisc && wrapper) throw SpecError("bindisc takes no affine wrapper");
  if (variant != ScorerVariant::bindisc && !wrapper)
    throw SpecError(std::string(scorer_name(variant)) + " needs an affine wrapper");
}

ClassStats make_class_stats(Matrix means, Matrix cov, double reg) {
  require_shape(cov.rows() == cov.cols() && cov.rows() == means.cols(), "class stats: covariance shape mismatch");
  if (!(reg > 0.0)) throw SpecError("covariance ridge must be > 0");
  ClassStats s;
  s.reg = reg;
  Matrix ridged = cov;
  for (std::size_t i = 0; i < ridged.rows(); ++i) ridged(i, i) += reg;
  s.cov_inverse = spd_inverse(ridged);
  s.whitener = cholesky(s.cov_inverse);
  s.whitened_means = matmul(means, s.whitener);
  s.means = std::move(means);
  s.cov = std::move(cov);
  return s;
}

namespace {

struct Pooled {
  Matrix means;
  Matrix cov;
};

Pooled pooled_moments(const Matrix& features, std::span<const int> labels, std::size_t num_classes) {
  require_shape(features.rows() == labels.size(), "fit_class_stats: features/labels length mismatch");
  const std::size_t h = features.cols();
  Pooled out{Matrix(num_classes, h), Matrix(h, h)};
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= num_classes) throw UsageError("fit_class_stats: label out of range");
    ++counts[y];
    for (std::size_t j = 0; j < h; ++j) out.means(y, j) += features(i, j);
  }
  std::size_t total = 0;
  for (std::size_t y = 0; y < num_classes; ++y) {
    if (counts[y] < 2) throw UsageError("fit_class_stats: class " + std::to_string(y) + " has fewer than 2 samples");
    total += counts[y];
    for (std::size_t j = 0; j < h; ++j) out.means(y, j) /= static_cast<double>(counts[y]);
  }
  std::vector<double> centred(h);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < h; ++j) centred[j] = features(i, j) - out.means(y, j);
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = a; b < h; ++b) out.cov(a, b) += centred[a] * centred[b];
  }
  const double denom = static_cast<double>(total - num_classes);
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t b = a; b < h; ++b) {
      out.cov(a, b) /= denom;
      out.cov(b, a) = out.cov(a, b);
    }
  return out;
}

}  // namespace

ClassStats fit_class_stats(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                           double reg) {
  auto pooled = pooled_moments(features, labels, num_classes);
  return make_class_stats(std::move(pooled.means), std::move(pooled.cov), reg);
}

ClassStats fit_class_stats_relative(const Matrix& features, std::span<const int> labels,
                                    std::size_t num_classes, double scale) {
  auto pooled = pooled_moments(features, labels, num_classes);
  double trace = 0.0;
  for (std::size_t i = 0; i < pooled.cov.rows(); ++i) trace += pooled.cov(i, i);
  double reg = scale * trace / static_cast<double>(pooled.cov.rows());
  if (!(reg > 0.0)) reg = scale;
  return make_class_stats(std::move(pooled.means), std::move(pooled.cov), reg);
}

double energy_score(std::span<const double> f_logits) { return log_sum_exp(f_logits); }

double msp_score(std::span<const double> f_logits) {
  const auto p = softmax(f_logits);
  return *std::max_element(p.begin(), p.end());
}

double mahalanobis_score(const ClassStats& stats, std::span<const double> feature) {
  require_shape(feature.size() == stats.dim(), "mahalanobis_score: feature width mismatch");
  const std::size_t h = stats.dim();
  std::vector<double> diff(h);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < stats.num_classes(); ++y) {
    for (std::size_t j = 0; j < h; ++j) diff[j] = feature[j] - stats.means(y, j);
    double q = 0.0;
    for (std::size_t a = 0; a < h; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < h; ++b) row += stats.cov_inverse(a, b) * diff[b];
      q += diff[a] * row;
    }
    best = std::min(best, q);
  }
  return -std::sqrt(std::max(best, 0.0));
}

std::vector<double> mahalanobis_scores(const ClassStats& stats, const Matrix& features,
                                       std::vector<std::size_t>* nearest) {
  require_shape(features.cols() == stats.dim(), "mahalanobis_scores: feature width mismatch");
  const Matrix white = matmul(features, stats.whitener);
  const std::size_t n = features.rows(), h = stats.dim(), k = stats.num_classes();
  std::vector<double> out(n);
  if (nearest) nearest->assign(n, 0);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * h > (1u << 15))
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t y = 0; y < k; ++y) {
      double q = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        const double d = white(i, j) - stats.whitened_means(y, j);
        q += d * d;
      }
      if (q < best) {
        best = q;
        arg = y;
      }
    }
    out[i] = -std::sqrt(best);
    if (nearest) (*nearest)[i] = arg;
  }
  return out;
}

double raw_score(ScorerVariant variant, const ForwardPass& pass, std::size_t row, const ClassStats* stats) {
  switch (variant) {
    case ScorerVariant::bindisc: return pass.g_logit[row];
    case ScorerVariant::energy: return energy_score(pass.f_logits.row(row));
    case ScorerVariant::msp: return msp_score(pass.f_logits.row(row));
    case ScorerVariant::mahalanobis:
      if (!stats) throw UsageError("mahalanobis scorer requires fitted class stats");
      return mahalanobis_score(*stats, pass.features.row(row));
  }
  return 0.0;
}

double scorer_logit(const ScorerKind& kind, const ForwardPass& pass, std::size_t row, const ClassStats* stats) {
  kind.validate();
  const double raw = raw_score(kind.variant, pass, row, stats);
  if (kind.variant == ScorerVariant::bindisc) return raw;
  return kind.wrapper->w * raw + kind.wrapper->b;
}

std::vector<double> scorer_logits(const ScorerKind& kind, const ForwardPass& pass, const ClassStats* stats) {
  kind.validate();
  const std::size_t n = pass.size();
  std::vector<double> raw(n);
  if (kind.variant == ScorerVariant::mahalanobis) {
    if (!stats) throw UsageError("mahalanobis scorer requires fitted class stats");
    raw = mahalanobis_scores(*stats, pass.features);
  } else {
    for (std::size_t i = 0; i < n; ++i) raw[i] = raw_score(kind.variant, pass, i, stats);
  }
  if (kind.variant == ScorerVariant::bindisc) return raw;
  for (double& v : raw) v = kind.wrapper->w * v + kind.wrapper->b;
  return raw;
}

}  // namespace imood
