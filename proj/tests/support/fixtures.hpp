#pragma once

// Small batches and objectives shared by the unit and acceptance tests.

#include <random>

#include "imood/imood.hpp"
#include "imood/model.hpp"
#include "imood/scorers.hpp"

namespace imood::testing {

struct GradFixture {
  ModelParams params;
  Batch batch;
  Objective objective;
  ClassStats stats;
};

/// Random batch with `n_id` ID rows over K classes and `n_ood` OOD rows, a
/// randomly initialized model, and the prior of a long-tailed profile.
inline GradFixture make_grad_fixture(GammaMode mode, ScorerVariant scorer, std::uint64_t seed,
                                     std::size_t d = 3, std::size_t h = 7, std::size_t k = 4,
                                     std::size_t n_id = 12, std::size_t n_ood = 12) {
  GradFixture f;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.5);
  f.params = init_params(d, h, k, seed + 100);
  // Non-zero biases and wrapper values so every term is exercised.
  for (ParamId id : {ParamId::backbone_b, ParamId::classifier_b, ParamId::detector_b, ParamId::gamma_b})
    for (double& v : f.params[id].values()) v = 0.3 * g(rng);
  f.params[ParamId::wrapper_w](0, 0) = 0.8;
  f.params[ParamId::wrapper_b](0, 0) = -0.2;

  f.batch.x = Matrix(n_id + n_ood, d);
  for (double& v : f.batch.x.values()) v = g(rng);
  for (std::size_t i = 0; i < n_id; ++i) f.batch.labels.push_back(static_cast<int>(i % k));
  for (std::size_t i = 0; i < n_ood; ++i) f.batch.labels.push_back(-1);

  std::vector<std::size_t> counts(k);
  for (std::size_t y = 0; y < k; ++y) counts[y] = 100 >> y;  // 100, 50, 25, 12, ...
  for (auto& c : counts) c = c == 0 ? 1 : c;
  f.objective.prior = class_prior(counts);
  f.objective.gamma_mode = mode;
  f.objective.scorer = scorer;
  f.objective.weights.tau = 0.7;
  f.objective.weights.lambda_ood = 1.3;
  f.objective.weights.lambda_gamma = 0.9;

  if (scorer == ScorerVariant::mahalanobis) {
    // Fit on features with extra synthetic rows so every class has >= 2 samples.
    std::vector<int> labels;
    Matrix x(8 * k, d);
    for (double& v : x.values()) v = g(rng);
    for (std::size_t i = 0; i < 8 * k; ++i) labels.push_back(static_cast<int>(i % k));
    f.stats = fit_class_stats_relative(backbone(f.params, x), labels, k, 1e-1);
    f.objective.stats = &f.stats;
  }
  return f;
}

/// Loss evaluator over the stop-gradient surrogate frozen at the fixture's
/// current parameters.
inline LossEvaluator frozen_evaluator(const GradFixture& f, const StopGradValues& frozen) {
  return [&f, &frozen](const ParamSet& p) {
    ModelParams m;
    m.tensors = p;
    return total_loss(f.objective, m, f.batch, &frozen).total;
  };
}

}  // namespace imood::testing
