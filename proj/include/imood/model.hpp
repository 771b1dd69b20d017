#pragma once

#include <cstdint>

#include "imood/diffcore.hpp"
#include "imood/matrix.hpp"

namespace imood {

/// Floor added after the softplus of the gamma head, keeping gamma > 0
/// even when the softplus underflows.
inline constexpr double kGammaFloor = 1e-6;

/// One-hidden-layer rectifier backbone shared by three heads:
///   classifier  f : h -> K logits
///   detector    g : h -> 1 logit
///   gamma head    : h -> K positive factors
/// plus the two scalars (w, b) of the affine wrapper used by the
/// energy / msp / mahalanobis scorers.
struct ModelParams {
  ParamSet tensors;

  std::size_t input_dim() const noexcept { return tensors[ParamId::backbone_w].rows(); }
  std::size_t hidden() const noexcept { return tensors[ParamId::backbone_w].cols(); }
  std::size_t num_classes() const noexcept { return tensors[ParamId::classifier_w].cols(); }

  Matrix& operator[](ParamId id) { return tensors[id]; }
  const Matrix& operator[](ParamId id) const { return tensors[id]; }

  /// Throws DimensionError on inconsistent shapes, NumericError on non-finite weights.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform weights in (-s, s), s = sqrt(6 / (fan_in + fan_out));
/// zero biases; wrapper (w, b) = (1, 0). Deterministic under `seed`.
ModelParams init_params(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, std::uint64_t seed);

struct ForwardPass {
  Matrix features;    // n x h, rectified
  Matrix f_logits;    // n x K
  Matrix g_logit;     // n x 1
  Matrix gamma_pre;   // n x K, before softplus
  Matrix gamma;       // n x K, softplus(gamma_pre) + kGammaFloor

  std::size_t size() const noexcept { return f_logits.rows(); }
};

ForwardPass forward(const ModelParams& params, const Matrix& x);

/// Backbone features only.
Matrix backbone(const ModelParams& params, const Matrix& x);

/// sigma(g(x)) for one row of `x`. Touches only the backbone and detector head.
double ood_probability(const ModelParams& params, std::span<const double> x);

/// Detector logits for every row. Touches only the backbone and detector head.
Matrix detector_logits(const ModelParams& params, const Matrix& x);

}  // namespace imood
