#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imood/kernels.hpp"
#include "imood/matrix.hpp"

namespace imood {

// ---------------------------------------------------------------------------
// Scalar and vector primitives. All are stabilized for extreme arguments.
// ---------------------------------------------------------------------------

/// 1 / (1 + e^-z), evaluated without overflow for either sign of z.
double sigmoid(double z) noexcept;

/// log(1 + e^z), overflow-free.
double softplus(double z) noexcept;

/// log sigma(z) = -softplus(-z).
inline double log_sigmoid(double z) noexcept { return -softplus(-z); }

/// Max-subtracted log-sum-exp. Throws DimensionError on empty input.
double log_sum_exp(std::span<const double> z);

/// Max-subtracted softmax. Throws DimensionError on empty input.
std::vector<double> softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Parameters and gradients
// ---------------------------------------------------------------------------

/// Identifies every trainable tensor of the model.
enum class ParamId : std::uint8_t {
  backbone_w,
  backbone_b,
  classifier_w,
  classifier_b,
  detector_w,
  detector_b,
  gamma_w,
  gamma_b,
  wrapper_w,
  wrapper_b,
};
inline constexpr std::size_t kParamCount = 10;

const char* param_name(ParamId id) noexcept;
std::optional<ParamId> param_from_name(const std::string& name) noexcept;
constexpr std::array<ParamId, kParamCount> all_params() {
  return {ParamId::backbone_w,   ParamId::backbone_b, ParamId::classifier_w, ParamId::classifier_b,
          ParamId::detector_w,   ParamId::detector_b, ParamId::gamma_w,      ParamId::gamma_b,
          ParamId::wrapper_w,    ParamId::wrapper_b};
}

/// Fixed set of named tensors, indexed by ParamId.
struct ParamSet {
  std::array<Matrix, kParamCount> tensors;

  Matrix& operator[](ParamId id) { return tensors[static_cast<std::size_t>(id)]; }
  const Matrix& operator[](ParamId id) const { return tensors[static_cast<std::size_t>(id)]; }

  /// Same shapes as `like`, all zeros.
  static ParamSet zeros_like(const ParamSet& like);
  bool all_finite() const noexcept;
  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// A scalar loss value with its gradient for every parameter tensor.
struct GradBundle {
  double value = 0.0;
  ParamSet grads;
};

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  std::size_t probes = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  /// Restrict probing to these tensors. Empty means all non-empty tensors.
  std::vector<ParamId> only;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t probed = 0;
  ParamId worst_param = ParamId::backbone_w;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double worst_error = 0.0;  // |analytic - numeric| / max(1, |analytic|)

  std::string summary() const;
};

using LossEvaluator = std::function<GradBundle(const ParamSet&)>;

/// Compares analytic gradients from `loss` against central differences at
/// randomly chosen scalar coordinates of `params`.
/// Throws NumericError if the loss is non-finite at a probe point.
GradCheckReport check_gradient(const LossEvaluator& loss, const ParamSet& params,
                               const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Small dense solves
// ---------------------------------------------------------------------------

/// Lower-triangular L with a = L L^T.
/// Throws NumericError when a pivot is not strictly positive.
Matrix cholesky(const Matrix& a);

/// Inverse of a symmetric positive-definite matrix via Cholesky.
/// Throws NumericError when a pivot is not strictly positive.
Matrix spd_inverse(const Matrix& a);

}  // namespace imood
