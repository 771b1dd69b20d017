#include "imood/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace imood {

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) noexcept {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DimensionError("log_sum_exp: empty input");
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

const char* param_name(ParamId id) noexcept {
  switch (id) {
    case ParamId::backbone_w: return "backbone_w";
    case ParamId::backbone_b: return "backbone_b";
    case ParamId::classifier_w: return "classifier_w";
    case ParamId::classifier_b: return "classifier_b";
    case ParamId::detector_w: return "detector_w";
    case ParamId::detector_b: return "detector_b";
    case ParamId::gamma_w: return "gamma_w";
    case ParamId::gamma_b: return "gamma_b";
    case ParamId::wrapper_w: return "wrapper_w";
    case ParamId::wrapper_b: return "wrapper_b";
  }
  return "?";
}

std::optional<ParamId> param_from_name(const std::string& name) noexcept {
  for (ParamId id : all_params())
    if (name == param_name(id)) return id;
  return std::nullopt;
}

ParamSet ParamSet::zeros_like(const ParamSet& like) {
  ParamSet out;
  for (std::size_t i = 0; i < kParamCount; ++i)
    out.tensors[i] = Matrix(like.tensors[i].rows(), like.tensors[i].cols());
  return out;
}

bool ParamSet::all_finite() const noexcept {
  return std::all_of(tensors.begin(), tensors.end(), [](const Matrix& m) { return m.all_finite(); });
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " probes=" << probed << " worst=" << param_name(worst_param)
     << "[" << worst_index << "] analytic=" << worst_analytic << " numeric=" << worst_numeric
     << " err=" << worst_error;
  return os.str();
}

GradCheckReport check_gradient(const LossEvaluator& loss, const ParamSet& params,
                               const GradCheckOptions& options) {
  std::vector<ParamId> candidates = options.only;
  if (candidates.empty())
    for (ParamId id : all_params())
      if (!params[id].empty()) candidates.push_back(id);
  if (candidates.empty()) throw UsageError("check_gradient: no parameters to probe");

  const GradBundle base = loss(params);
  if (!std::isfinite(base.value)) throw NumericError("check_gradient: non-finite loss at base point");

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  ParamSet probe = params;
  for (std::size_t p = 0; p < options.probes; ++p) {
    const ParamId id = candidates[rng() % candidates.size()];
    Matrix& t = probe[id];
    if (t.empty()) continue;
    const std::size_t idx = rng() % t.size();
    const double orig = t[idx];

    t[idx] = orig + options.step;
    const double up = loss(probe).value;
    t[idx] = orig - options.step;
    const double down = loss(probe).value;
    t[idx] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError(std::string("check_gradient: non-finite loss probing ") + param_name(id));

    const double numeric = (up - down) / (2.0 * options.step);
    const double analytic = base.grads[id][idx];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    ++report.probed;
    if (report.probed == 1 || err > report.worst_error) {
      report.worst_param = id;
      report.worst_index = idx;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
      report.worst_error = err;
    }
  }
  report.passed = report.worst_error <= options.tolerance;
  return report;
}

Matrix cholesky(const Matrix& a) {
  require_shape(a.rows() == a.cols(), "cholesky: matrix not square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericError("cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

Matrix spd_inverse(const Matrix& a) {
  const Matrix l = cholesky(a);
  const std::size_t n = a.rows();
  // Solve L L^T X = I column by column.
  Matrix inv(n, n);
  std::vector<double> y(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * inv(k, c);
      inv(ii, c) = s / l(ii, ii);
    }
  }
  // Symmetrize away round-off.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = inv(j, i) = m;
    }
  return inv;
}

}  // namespace imood
