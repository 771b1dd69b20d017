#pragma once

// Class-aware bias correction for OOD detectors trained on long-tailed data.
//
// The detector posterior learned on imbalanced data relates to its balanced
// counterpart through
//
//     sigma(g_bal(x)) = beta(x) * sigma(g(x)),
//     beta(x)         = sum_y gamma_y(x) * p(y | x, i) / pi_y,
//
// so g = g_bal - log[(beta - 1) e^{g_bal} + beta]. Training applies binary
// cross-entropy to g(x) - delta(x), with delta the same log term evaluated at
// the detector output, and constrains beta(x) * sigma(g(x)) <= 1 through a
// hinge on the gamma head.

#include <span>
#include <string>
#include <vector>

#include "imood/diffcore.hpp"
#include "imood/model.hpp"
#include "imood/scorers.hpp"

namespace imood {

/// Clamp applied inside delta's logarithm.
inline constexpr double kDeltaFloor = 1e-12;

struct ClassPrior {
  std::vector<double> pi;
  std::size_t size() const noexcept { return pi.size(); }
};

/// pi_y = n_y / sum n. Throws SpecError on an empty vector or a zero count.
ClassPrior class_prior(std::span<const std::size_t> class_counts);

/// beta = sum_y gamma_y p_y / pi_y.
double compute_beta(std::span<const double> p, std::span<const double> gamma, const ClassPrior& prior);

/// log max((beta - 1) e^g + beta, kDeltaFloor); exactly 0 when beta == 1.
/// Throws NumericError for non-finite g, DomainError for beta <= 0.
double delta(double g_logit, double beta);

/// delta together with d delta / d g (0 where the clamp is active).
struct DeltaValue {
  double value = 0.0;
  double slope = 0.0;
  bool clamped = false;
};
DeltaValue delta_with_slope(double g_logit, double beta);

/// g with sigma(g_bal) = beta * sigma(g). Throws DomainError when
/// (beta - 1) e^{g_bal} + beta <= 0, i.e. beta * sigma(g) would have to exceed 1.
double calibrate_logit(double g_bal, double beta);

/// Per-sample bookkeeping of the correction terms.
struct ImoodTerms {
  std::vector<double> p;
  std::vector<double> gamma;
  double beta = 1.0;
  double delta_raw = 0.0;
  double delta_clipped = 0.0;
  int t = 1;
};

struct OodLossOptions {
  bool clip_delta = true;
  bool stop_delta_g = false;
};

/// A scalar loss with its derivative with respect to one scalar input.
struct ScalarLoss {
  double value = 0.0;
  double grad = 0.0;
};

/// BCE(g - delta_clipped, t), with beta held constant. `grad` is d/dg,
/// including delta's own dependence on g unless it is clipped or stopped.
/// `terms`, if given, receives beta and both delta values.
ScalarLoss loss_ood(double g_logit, double beta, int t, const OodLossOptions& options = {},
                    ImoodTerms* terms = nullptr);

/// max(0, beta * sigma(g) - 1), with sigma(g) held constant. `grad` is d/dbeta.
ScalarLoss loss_gamma(double g_logit, double beta);

/// Cross-entropy of softmax(f + tau log pi) against `label`, with its
/// gradient with respect to the K logits.
struct VectorLoss {
  double value = 0.0;
  std::vector<double> grad;
};
VectorLoss logit_adjusted_ce(std::span<const double> f_logits, int label, const ClassPrior& prior, double tau);

// ---------------------------------------------------------------------------
// Batched objective
// ---------------------------------------------------------------------------

/// How gamma_y(x) is obtained.
///   none          beta = 1 (plain BCE baseline)
///   constant      gamma_y = 1 / K
///   learned_class gamma_y = softplus(b_y) + floor, input independent
///   learned_input gamma_y = gamma head output
enum class GammaMode { none, constant, learned_class, learned_input };

const char* gamma_mode_name(GammaMode m) noexcept;
GammaMode gamma_mode_from_name(const std::string& name);

struct LossWeights {
  double lambda_ood = 1.0;
  double lambda_gamma = 1.0;
  double tau = 1.0;
  bool clip_delta = true;
  bool stop_delta_g = false;
};

/// Rows of a training batch; label -1 marks OOD rows.
struct Batch {
  Matrix x;
  std::vector<int> labels;
};

struct Objective {
  ClassPrior prior;
  GammaMode gamma_mode = GammaMode::learned_input;
  ScorerVariant scorer = ScorerVariant::bindisc;
  LossWeights weights;
  const ClassStats* stats = nullptr;  // required for the mahalanobis scorer
};

/// Values that the two ImOOD losses treat as constants. Passing a snapshot
/// taken at the current parameters changes no value; holding it fixed while
/// perturbing parameters turns each loss into the surrogate whose gradient is
/// the stop-gradient one, which is what finite differences must check.
struct StopGradValues {
  std::vector<double> beta_ood;  // beta seen by L_ood, per row
  std::vector<double> sigma_g;   // sigma(logit) seen by L_gamma, per row
  Matrix p;                      // class posterior seen by L_gamma, n x K
};

struct LossBreakdown {
  GradBundle total;
  double ce = 0.0;     // mean over ID rows
  double ood = 0.0;    // mean over all rows
  double gamma = 0.0;  // mean over all rows
  std::vector<double> logits;
  std::vector<double> beta;
};

/// Gamma factors for one forward-pass row under `mode`.
std::vector<double> gamma_for_row(GammaMode mode, const ModelParams& params, const ForwardPass& pass, std::size_t row);

/// Snapshot of the stop-gradient values at `params`.
StopGradValues freeze(const Objective& objective, const ModelParams& params, const Batch& batch);

/// mean_ID CE_la + lambda_ood * mean L_ood + lambda_gamma * mean L_gamma, with
/// analytic gradients for every parameter tensor.
/// Throws UsageError if the batch has no ID rows or mahalanobis lacks stats.
LossBreakdown total_loss(const Objective& objective, const ModelParams& params, const Batch& batch,
                         const StopGradValues* frozen = nullptr);

}  // namespace imood
