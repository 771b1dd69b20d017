#include <cmath>
#include <array>
#include <random>

#include "doctest.h"
#include "imood/diffcore.hpp"
#include "imood/error.hpp"
#include "imood/kernels.hpp"

using namespace imood;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  return out;
}

}  // namespace

TEST_CASE("softmax of 1,2,3") {
  const std::vector<double> z{1, 2, 3};
  const auto p = softmax(z);
  // e^k / (e + e^2 + e^3)
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int k = 0; k < 3; ++k) CHECK(p[k] == doctest::Approx(std::exp(k + 1.0) / denom).epsilon(1e-14));
  CHECK(p[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax survives extreme logits and sums to one") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-800.0, 800.0);
  for (std::size_t n : {1u, 2u, 10u, 1000u, 10000u}) {
    std::vector<double> z(n);
    for (auto& v : z) v = u(rng);
    const auto p = softmax(z);
    double s = 0;
    for (double v : p) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(softmax(std::vector<double>{}), DimensionError);
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), DimensionError);
}

TEST_CASE("sigmoid, softplus and log-sum-exp values") {
  CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(sigmoid(2.0) == doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(std::isfinite(sigmoid(-1e308)));
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  const std::vector<double> z{1000.0, 1000.0};
  CHECK(log_sum_exp(z) == doctest::Approx(1000.0 + std::log(2.0)));
  for (double x : {-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 30.0})
    CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("matmul kernels match a triple-loop oracle") {
  std::mt19937_64 rng(11);
  for (auto [n, k, m] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 4, 5}, {17, 9, 31}, {200, 64, 10}, {300, 200, 150}}) {
    const Matrix a = random_matrix(n, k, rng), b = random_matrix(k, m, rng);
    const Matrix ref = naive_product(a, b);
    for (const Matrix& got : {kernels::serial::matmul(a, b), kernels::parallel::matmul(a, b)}) {
      REQUIRE(got.rows() == ref.rows());
      REQUIRE(got.cols() == ref.cols());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    const Matrix at = a.transposed(), bt = b.transposed();
    const Matrix tn = kernels::parallel::matmul_tn(at, b), nt = kernels::parallel::matmul_nt(a, bt);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("cholesky and spd_inverse") {
  const Matrix a{{4, 2}, {2, 3}};
  const Matrix l = cholesky(a);
  CHECK(l(0, 0) == doctest::Approx(2.0));
  CHECK(l(0, 1) == 0.0);
  CHECK(l(1, 0) == doctest::Approx(1.0));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)));
  const Matrix inv = spd_inverse(a);
  const Matrix id = matmul(a, inv);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(id(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
  CHECK_THROWS_AS(cholesky(Matrix{{1, 2}, {2, 1}}), NumericError);
}

TEST_CASE("gradient checker accepts a correct gradient and rejects a wrong one") {
  ParamSet p;
  p[ParamId::backbone_w] = Matrix{{0.3, -1.2}, {0.8, 2.0}};
  // f = sum w^3 / 3, df/dw = w^2
  auto good = [](const ParamSet& q) {
    GradBundle b;
    b.grads = ParamSet::zeros_like(q);
    const Matrix& w = q[ParamId::backbone_w];
    for (std::size_t i = 0; i < w.size(); ++i) {
      b.value += w[i] * w[i] * w[i] / 3.0;
      b.grads[ParamId::backbone_w][i] = w[i] * w[i];
    }
    return b;
  };
  auto bad = [&](const ParamSet& q) {
    GradBundle b = good(q);
    b.grads[ParamId::backbone_w][3] *= 1.01;
    return b;
  };
  GradCheckOptions opt;
  opt.probes = 200;
  const auto ok = check_gradient(good, p, opt);
  CHECK(ok.passed);
  CHECK(ok.probed > 0);
  CHECK_FALSE(check_gradient(bad, p, opt).passed);
  auto nan_loss = [](const ParamSet& q) {
    GradBundle b;
    b.grads = ParamSet::zeros_like(q);
    b.value = std::nan("");
    return b;
  };
  CHECK_THROWS_AS(check_gradient(nan_loss, p, opt), NumericError);
}

TEST_CASE("parameter names round trip") {
  for (ParamId id : all_params()) {
    const auto back = param_from_name(param_name(id));
    REQUIRE(back.has_value());
    CHECK(*back == id);
  }
  CHECK_FALSE(param_from_name("nope").has_value());
}
