#include "imood/imood.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "imood/error.hpp"
#include "imood/kernels.hpp"

namespace imood {

ClassPrior class_prior(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) throw SpecError("class_prior: no classes");
  double total = 0.0;
  for (std::size_t n : class_counts) {
    if (n == 0) throw SpecError("class_prior: every class needs at least one sample");
    total += static_cast<double>(n);
  }
  ClassPrior prior;
  prior.pi.reserve(class_counts.size());
  for (std::size_t n : class_counts) prior.pi.push_back(static_cast<double>(n) / total);
  return prior;
}

double compute_beta(std::span<const double> p, std::span<const double> gamma, const ClassPrior& prior) {
  require_shape(p.size() == prior.size() && gamma.size() == prior.size(), "compute_beta: length mismatch");
  double beta = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) beta += gamma[y] * p[y] / prior.pi[y];
  return beta;
}

namespace {

void check_delta_args(double g, double beta) {
  if (!std::isfinite(g)) throw NumericError("delta: non-finite logit");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("delta: beta must be finite and > 0");
}

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

DeltaValue delta_with_slope(double g, double beta) {
  check_delta_args(g, beta);
  if (beta == 1.0) return {0.0, 0.0, false};
  if (beta > 1.0) {
    // log(e^{log(beta-1) + g} + e^{log beta})
    const double a = std::log(beta - 1.0) + g;
    const double b = std::log(beta);
    return {log_add_exp(a, b), sigmoid(a - b), false};
  }
  // beta < 1: argument = beta (1 - r) with r = (1 - beta) / beta * e^g.
  const double r = (1.0 - beta) / beta * std::exp(g);
  const double arg = beta * (1.0 - r);
  if (!(arg > kDeltaFloor)) return {std::log(kDeltaFloor), 0.0, true};
  return {std::log(beta) + std::log1p(-r), -r / (1.0 - r), false};
}

double delta(double g, double beta) { return delta_with_slope(g, beta).value; }

double calibrate_logit(double g_bal, double beta) {
  check_delta_args(g_bal, beta);
  if (beta == 1.0) return g_bal;
  if (beta > 1.0) return g_bal - log_add_exp(std::log(beta - 1.0) + g_bal, std::log(beta));
  const double r = (1.0 - beta) / beta * std::exp(g_bal);
  if (!(r < 1.0)) throw DomainError("calibrate_logit: (beta - 1) e^g + beta <= 0");
  return g_bal - std::log(beta) - std::log1p(-r);
}

ScalarLoss loss_ood(double g, double beta, int t, const OodLossOptions& options, ImoodTerms* terms) {
  const DeltaValue d = delta_with_slope(g, beta);
  double clipped = d.value;
  bool passes = true;  // delta contributes to the gradient
  if (options.clip_delta) {
    if (t == 1 && d.value < 0.0) {
      clipped = 0.0;
      passes = false;
    } else if (t == 0 && d.value > 0.0) {
      clipped = 0.0;
      passes = false;
    }
  }
  const double z = g - clipped;
  ScalarLoss out;
  out.value = t == 1 ? softplus(-z) : softplus(z);
  const double dz = sigmoid(z) - static_cast<double>(t);
  const double dz_dg = 1.0 - ((passes && !options.stop_delta_g) ? d.slope : 0.0);
  out.grad = dz * dz_dg;
  if (terms) {
    terms->beta = beta;
    terms->delta_raw = d.value;
    terms->delta_clipped = clipped;
    terms->t = t;
  }
  return out;
}

namespace {

ScalarLoss gamma_hinge(double beta, double sigma_g) {
  const double v = beta * sigma_g - 1.0;
  if (v > 0.0) return {v, sigma_g};
  return {0.0, 0.0};
}

}  // namespace

ScalarLoss loss_gamma(double g, double beta) { return gamma_hinge(beta, sigmoid(g)); }

VectorLoss logit_adjusted_ce(std::span<const double> f_logits, int label, const ClassPrior& prior, double tau) {
  require_shape(f_logits.size() == prior.size(), "logit_adjusted_ce: logits/prior length mismatch");
  if (label < 0 || static_cast<std::size_t>(label) >= f_logits.size())
    throw UsageError("logit_adjusted_ce: label out of range");
  std::vector<double> adjusted(f_logits.size());
  for (std::size_t y = 0; y < adjusted.size(); ++y) adjusted[y] = f_logits[y] + tau * std::log(prior.pi[y]);
  VectorLoss out;
  out.value = log_sum_exp(adjusted) - adjusted[static_cast<std::size_t>(label)];
  out.grad = softmax(adjusted);
  out.grad[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

const char* gamma_mode_name(GammaMode m) noexcept {
  switch (m) {
    case GammaMode::none: return "none";
    case GammaMode::constant: return "const";
    case GammaMode::learned_class: return "learned_class";
    case GammaMode::learned_input: return "learned_input";
  }
  return "?";
}

GammaMode gamma_mode_from_name(const std::string& name) {
  for (GammaMode m : {GammaMode::none, GammaMode::constant, GammaMode::learned_class, GammaMode::learned_input})
    if (name == gamma_mode_name(m)) return m;
  throw SpecError("unknown gamma mode '" + name + "'");
}

std::vector<double> gamma_for_row(GammaMode mode, const ModelParams& params, const ForwardPass& pass,
                                  std::size_t row) {
  const std::size_t k = params.num_classes();
  switch (mode) {
    case GammaMode::none:
    case GammaMode::constant: return std::vector<double>(k, 1.0 / static_cast<double>(k));
    case GammaMode::learned_class: {
      std::vector<double> g(k);
      for (std::size_t y = 0; y < k; ++y) g[y] = softplus(params[ParamId::gamma_b][y]) + kGammaFloor;
      return g;
    }
    case GammaMode::learned_input: {
      const auto r = pass.gamma.row(row);
      return {r.begin(), r.end()};
    }
  }
  return {};
}

namespace {

struct RowScore {
  double raw = 0.0;
  double logit = 0.0;
  std::size_t argmax = 0;      // msp: winning class
  std::size_t nearest = 0;     // mahalanobis: nearest class
  double distance = 0.0;       // mahalanobis: sqrt of the squared distance
};

void check_objective(const Objective& objective, const ModelParams& params, const Batch& batch) {
  params.validate();
  require_shape(batch.x.rows() == batch.labels.size(), "total_loss: rows/labels mismatch");
  require_shape(objective.prior.size() == params.num_classes(), "total_loss: prior/classifier width mismatch");
  if (objective.scorer == ScorerVariant::mahalanobis) {
    if (!objective.stats) throw UsageError("mahalanobis scorer requires fitted class stats");
    require_shape(objective.stats->dim() == params.hidden(), "total_loss: class stats width != hidden width");
  }
  for (int y : batch.labels)
    if (y >= static_cast<int>(params.num_classes())) throw UsageError("batch label exceeds the number of classes");
}

struct ScoredPass {
  ForwardPass pass;
  std::vector<RowScore> scores;
  Matrix white;  // mahalanobis: whitened features
};

ScoredPass score_batch(const Objective& objective, const ModelParams& params, const Batch& batch) {
  ScoredPass out;
  out.pass = forward(params, batch.x);
  const ForwardPass& fp = out.pass;
  if (!fp.f_logits.all_finite() || !fp.g_logit.all_finite() || !fp.gamma.all_finite())
    throw NumericError("forward pass produced non-finite values");
  const std::size_t n = fp.size();
  out.scores.resize(n);
  const double w = params[ParamId::wrapper_w][0], b = params[ParamId::wrapper_b][0];

  if (objective.scorer == ScorerVariant::mahalanobis) {
    const ClassStats& st = *objective.stats;
    out.white = matmul(fp.features, st.whitener);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t y = 0; y < st.num_classes(); ++y) {
        double q = 0.0;
        for (std::size_t j = 0; j < st.dim(); ++j) {
          const double d = out.white(i, j) - st.whitened_means(y, j);
          q += d * d;
        }
        if (q < best) {
          best = q;
          out.scores[i].nearest = y;
        }
      }
      out.scores[i].distance = std::sqrt(best);
      out.scores[i].raw = -out.scores[i].distance;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto f = fp.f_logits.row(i);
      RowScore& s = out.scores[i];
      switch (objective.scorer) {
        case ScorerVariant::bindisc: s.raw = fp.g_logit[i]; break;
        case ScorerVariant::energy: s.raw = log_sum_exp(f); break;
        case ScorerVariant::msp: {
          const auto p = softmax(f);
          s.argmax = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
          s.raw = p[s.argmax];
          break;
        }
        case ScorerVariant::mahalanobis: break;
      }
    }
  }
  for (RowScore& s : out.scores)
    s.logit = objective.scorer == ScorerVariant::bindisc ? s.raw : w * s.raw + b;
  return out;
}

double live_beta(const Objective& objective, const ModelParams& params, const ForwardPass& fp, std::size_t row,
                 std::span<const double> p) {
  if (objective.gamma_mode == GammaMode::none) return 1.0;
  const auto gamma = gamma_for_row(objective.gamma_mode, params, fp, row);
  return compute_beta(p, gamma, objective.prior);
}

}  // namespace

StopGradValues freeze(const Objective& objective, const ModelParams& params, const Batch& batch) {
  check_objective(objective, params, batch);
  const ScoredPass sp = score_batch(objective, params, batch);
  const std::size_t n = sp.pass.size(), k = params.num_classes();
  StopGradValues out;
  out.beta_ood.resize(n);
  out.sigma_g.resize(n);
  out.p = Matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = softmax(sp.pass.f_logits.row(i));
    std::copy(p.begin(), p.end(), out.p.row(i).begin());
    out.beta_ood[i] = live_beta(objective, params, sp.pass, i, p);
    out.sigma_g[i] = sigmoid(sp.scores[i].logit);
  }
  return out;
}

LossBreakdown total_loss(const Objective& objective, const ModelParams& params, const Batch& batch,
                         const StopGradValues* frozen) {
  check_objective(objective, params, batch);
  const std::size_t n = batch.labels.size();
  if (n == 0) throw UsageError("total_loss: empty batch");
  const std::size_t n_id = static_cast<std::size_t>(std::count_if(batch.labels.begin(), batch.labels.end(),
                                                                  [](int y) { return y >= 0; }));
  if (n_id == 0) throw UsageError("total_loss: batch has no ID rows");
  if (frozen && (frozen->beta_ood.size() != n || frozen->sigma_g.size() != n || frozen->p.rows() != n))
    throw DimensionError("total_loss: frozen values do not match the batch");

  const ScoredPass sp = score_batch(objective, params, batch);
  const ForwardPass& fp = sp.pass;
  const std::size_t k = params.num_classes(), h = params.hidden();
  const LossWeights& lw = objective.weights;
  const double w = params[ParamId::wrapper_w][0];
  const double inv_n = 1.0 / static_cast<double>(n), inv_id = 1.0 / static_cast<double>(n_id);
  const OodLossOptions ood_opts{lw.clip_delta, lw.stop_delta_g};
  const bool maha = objective.scorer == ScorerVariant::mahalanobis;

  Matrix d_f(n, k), d_g(n, 1), d_gamma_pre(n, k), d_gamma_bias(n, k);
  Matrix d_h_direct = maha ? Matrix(n, h) : Matrix();
  std::vector<double> ce(n, 0.0), ood(n, 0.0), gam(n, 0.0), d_wrap_w(n, 0.0), d_wrap_b(n, 0.0), beta_out(n);

  std::exception_ptr failure;
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * h > (1u << 15))
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const int label = batch.labels[i];
      const auto f = fp.f_logits.row(i);
      const auto p = softmax(f);
      const RowScore& s = sp.scores[i];

      if (label >= 0) {
        const VectorLoss la = logit_adjusted_ce(f, label, objective.prior, lw.tau);
        ce[i] = la.value;
        for (std::size_t y = 0; y < k; ++y) d_f(i, y) += la.grad[y] * inv_id;
      }

      // Detector loss; beta is a constant here.
      const double beta = frozen ? frozen->beta_ood[i] : live_beta(objective, params, fp, i, p);
      beta_out[i] = beta;
      const ScalarLoss lo = loss_ood(s.logit, beta, label >= 0 ? 1 : 0, ood_opts);
      ood[i] = lo.value;
      const double c = lw.lambda_ood * inv_n * lo.grad;  // d total / d logit
      if (c != 0.0) {
        if (objective.scorer == ScorerVariant::bindisc) {
          d_g[i] = c;
        } else {
          d_wrap_w[i] = c * s.raw;
          d_wrap_b[i] = c;
          const double c_raw = c * w;
          switch (objective.scorer) {
            case ScorerVariant::energy:
              for (std::size_t y = 0; y < k; ++y) d_f(i, y) += c_raw * p[y];
              break;
            case ScorerVariant::msp: {
              const double pm = p[s.argmax];
              for (std::size_t y = 0; y < k; ++y)
                d_f(i, y) += c_raw * pm * ((y == s.argmax ? 1.0 : 0.0) - p[y]);
              break;
            }
            case ScorerVariant::mahalanobis: {
              // d(-sqrt q)/dz = -L L^T (z - mu) / sqrt q, with (z - mu) L already in `white`.
              if (s.distance > 0.0) {
                const ClassStats& st = *objective.stats;
                const Matrix& l = st.whitener;
                for (std::size_t a = 0; a < h; ++a) {
                  double acc = 0.0;
                  for (std::size_t j = 0; j <= a; ++j)
                    acc += l(a, j) * (sp.white(i, j) - st.whitened_means(s.nearest, j));
                  d_h_direct(i, a) = -c_raw * acc / s.distance;
                }
              }
              break;
            }
            case ScorerVariant::bindisc: break;
          }
        }
      }

      // Gamma constraint; sigma(logit) and p are constants here.
      if (objective.gamma_mode != GammaMode::none) {
        const double sigma = frozen ? frozen->sigma_g[i] : sigmoid(s.logit);
        const auto p_gamma = frozen ? frozen->p.row(i) : std::span<const double>(p);
        const auto gamma = gamma_for_row(objective.gamma_mode, params, fp, i);
        const ScalarLoss lg = gamma_hinge(compute_beta(p_gamma, gamma, objective.prior), sigma);
        gam[i] = lg.value;
        const double cg = lw.lambda_gamma * inv_n * lg.grad;  // d total / d beta
        if (cg != 0.0) {
          for (std::size_t y = 0; y < k; ++y) {
            const double d_gamma = cg * p_gamma[y] / objective.prior.pi[y];
            if (objective.gamma_mode == GammaMode::learned_input)
              d_gamma_pre(i, y) = d_gamma * sigmoid(fp.gamma_pre(i, y));
            else if (objective.gamma_mode == GammaMode::learned_class)
              d_gamma_bias(i, y) = d_gamma * sigmoid(params[ParamId::gamma_b][y]);
          }
        }
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  LossBreakdown out;
  for (std::size_t i = 0; i < n; ++i) {
    out.ce += ce[i];
    out.ood += ood[i];
    out.gamma += gam[i];
  }
  out.ce *= inv_id;
  out.ood *= inv_n;
  out.gamma *= inv_n;
  out.total.value = out.ce + lw.lambda_ood * out.ood + lw.lambda_gamma * out.gamma;
  out.beta = std::move(beta_out);
  out.logits.reserve(n);
  for (const RowScore& s : sp.scores) out.logits.push_back(s.logit);

  // Backward through the heads and the backbone.
  namespace kp = kernels::parallel;
  ParamSet& g = out.total.grads;
  g = ParamSet::zeros_like(params.tensors);
  g[ParamId::classifier_w] = kp::matmul_tn(fp.features, d_f);
  g[ParamId::classifier_b] = kp::column_sums(d_f);
  g[ParamId::detector_w] = kp::matmul_tn(fp.features, d_g);
  g[ParamId::detector_b] = kp::column_sums(d_g);
  g[ParamId::gamma_w] = kp::matmul_tn(fp.features, d_gamma_pre);
  g[ParamId::gamma_b] = kp::column_sums(d_gamma_pre) + kp::column_sums(d_gamma_bias);
  double ww = 0.0, wb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ww += d_wrap_w[i];
    wb += d_wrap_b[i];
  }
  g[ParamId::wrapper_w][0] = ww;
  g[ParamId::wrapper_b][0] = wb;

  Matrix d_h = kp::matmul_nt(d_f, params[ParamId::classifier_w]);
  d_h += kp::matmul_nt(d_g, params[ParamId::detector_w]);
  d_h += kp::matmul_nt(d_gamma_pre, params[ParamId::gamma_w]);
  if (maha) d_h += d_h_direct;
  for (std::size_t i = 0; i < d_h.size(); ++i)
    if (!(fp.features[i] > 0.0)) d_h[i] = 0.0;
  g[ParamId::backbone_w] = kp::matmul_tn(batch.x, d_h);
  g[ParamId::backbone_b] = kp::column_sums(d_h);
  return out;
}

}  // namespace imood
