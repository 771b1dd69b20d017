#include <cmath>
#include <random>

#include "doctest.h"
#include "imood/error.hpp"
#include "imood/model.hpp"

using namespace imood;

namespace {

Matrix random_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  Matrix x(n, d);
  for (double& v : x.values()) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("init shapes, Glorot bounds and zero biases") {
  const ModelParams p = init_params(2, 16, 10, 3);
  p.validate();
  CHECK(p.input_dim() == 2);
  CHECK(p.hidden() == 16);
  CHECK(p.num_classes() == 10);
  const double bound = std::sqrt(6.0 / 18.0);
  CHECK(bound == doctest::Approx(0.5774).epsilon(1e-4));
  for (double v : p[ParamId::backbone_w].values()) CHECK(std::abs(v) < bound);
  for (ParamId id : {ParamId::backbone_b, ParamId::classifier_b, ParamId::detector_b, ParamId::gamma_b})
    for (double v : p[id].values()) CHECK(v == 0.0);
  CHECK(p[ParamId::wrapper_w](0, 0) == 1.0);
  CHECK(p[ParamId::wrapper_b](0, 0) == 0.0);
  CHECK(init_params(2, 16, 10, 3) == p);
  CHECK_FALSE(init_params(2, 16, 10, 4) == p);
  CHECK_THROWS_AS(init_params(0, 16, 10, 3), DimensionError);
}

TEST_CASE("zero weights give constant outputs and gamma = softplus(0) + floor") {
  ModelParams p = init_params(3, 8, 4, 0);
  for (auto& t : p.tensors.tensors) t = Matrix(t.rows(), t.cols());
  const ForwardPass f = forward(p, random_inputs(5, 3, 1));
  for (double v : f.gamma.values()) CHECK(v == doctest::Approx(std::log(2.0) + 1e-6).epsilon(1e-15));
  CHECK(f.gamma(0, 0) == doctest::Approx(0.693148).epsilon(1e-6));
  for (double v : f.f_logits.values()) CHECK(v == 0.0);
  for (double v : f.g_logit.values()) CHECK(v == 0.0);
}

TEST_CASE("forward pass matches a hand-written evaluation") {
  const ModelParams p = init_params(3, 5, 4, 9);
  const Matrix x = random_inputs(7, 3, 2);
  const ForwardPass f = forward(p, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<double> h(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double s = p[ParamId::backbone_b](0, j);
      for (std::size_t k = 0; k < 3; ++k) s += x(i, k) * p[ParamId::backbone_w](k, j);
      h[j] = std::max(0.0, s);
      CHECK(f.features(i, j) == doctest::Approx(h[j]).epsilon(1e-14));
    }
    double g = p[ParamId::detector_b](0, 0);
    for (std::size_t j = 0; j < 5; ++j) g += h[j] * p[ParamId::detector_w](j, 0);
    CHECK(f.g_logit(i, 0) == doctest::Approx(g).epsilon(1e-14));
    for (std::size_t y = 0; y < 4; ++y) {
      double fy = p[ParamId::classifier_b](0, y), gy = p[ParamId::gamma_b](0, y);
      for (std::size_t j = 0; j < 5; ++j) {
        fy += h[j] * p[ParamId::classifier_w](j, y);
        gy += h[j] * p[ParamId::gamma_w](j, y);
      }
      CHECK(f.f_logits(i, y) == doctest::Approx(fy).epsilon(1e-14));
      CHECK(f.gamma(i, y) == doctest::Approx(std::log1p(std::exp(gy)) + 1e-6).epsilon(1e-14));
      CHECK(f.gamma(i, y) > 0.0);
    }
  }
  CHECK_THROWS_AS(forward(p, Matrix(2, 4)), DimensionError);
}

TEST_CASE("ood_probability equals sigmoid of the forward detector logit") {
  const ModelParams p = init_params(2, 12, 10, 1);
  const Matrix x = random_inputs(50, 2, 4);
  const ForwardPass f = forward(p, x);
  const Matrix g = detector_logits(p, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    CHECK(ood_probability(p, x.row(i)) == sigmoid(f.g_logit(i, 0)));
    CHECK(g(i, 0) == f.g_logit(i, 0));
  }
}

TEST_CASE("detector output ignores the classifier and gamma heads") {
  ModelParams p = init_params(2, 12, 10, 1);
  const Matrix x = random_inputs(20, 2, 8);
  const Matrix before = detector_logits(p, x);
  p[ParamId::classifier_w] = Matrix(12, 10, 123.0);
  p[ParamId::gamma_w] = Matrix(12, 10, -7.0);
  p[ParamId::gamma_b] = Matrix(1, 10, 3.0);
  CHECK(detector_logits(p, x) == before);
  for (std::size_t i = 0; i < x.rows(); ++i) CHECK(ood_probability(p, x.row(i)) == sigmoid(before(i, 0)));
}

TEST_CASE("validate rejects bad shapes and non-finite weights") {
  ModelParams p = init_params(2, 4, 3, 0);
  p[ParamId::gamma_b] = Matrix(1, 2);
  CHECK_THROWS_AS(p.validate(), DimensionError);
  p = init_params(2, 4, 3, 0);
  p[ParamId::detector_w](0, 0) = std::nan("");
  CHECK_THROWS_AS(p.validate(), NumericError);
}
