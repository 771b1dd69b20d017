#include "imood/model.hpp"

#include <cmath>
#include <random>

namespace imood {

void ModelParams::validate() const {
  const std::size_t d = input_dim(), h = hidden(), k = num_classes();
  auto expect = [this](ParamId id, std::size_t r, std::size_t c) {
    if (tensors[id].rows() != r || tensors[id].cols() != c)
      throw DimensionError(std::string("parameter ") + param_name(id) + " has the wrong shape");
  };
  if (d == 0 || h == 0 || k == 0) throw DimensionError("model dimensions must be >= 1");
  expect(ParamId::backbone_w, d, h);
  expect(ParamId::backbone_b, 1, h);
  expect(ParamId::classifier_w, h, k);
  expect(ParamId::classifier_b, 1, k);
  expect(ParamId::detector_w, h, 1);
  expect(ParamId::detector_b, 1, 1);
  expect(ParamId::gamma_w, h, k);
  expect(ParamId::gamma_b, 1, k);
  expect(ParamId::wrapper_w, 1, 1);
  expect(ParamId::wrapper_b, 1, 1);
  if (!tensors.all_finite()) throw NumericError("model parameters contain non-finite values");
}

ModelParams init_params(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0 || num_classes == 0) throw DimensionError("model dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    Matrix w(fan_in, fan_out);
    for (double& v : w.values()) v = u(rng);
    return w;
  };
  ModelParams p;
  p[ParamId::backbone_w] = glorot(input_dim, hidden);
  p[ParamId::backbone_b] = Matrix(1, hidden);
  p[ParamId::classifier_w] = glorot(hidden, num_classes);
  p[ParamId::classifier_b] = Matrix(1, num_classes);
  p[ParamId::detector_w] = glorot(hidden, 1);
  p[ParamId::detector_b] = Matrix(1, 1);
  p[ParamId::gamma_w] = glorot(hidden, num_classes);
  p[ParamId::gamma_b] = Matrix(1, num_classes);
  p[ParamId::wrapper_w] = Matrix(1, 1, 1.0);
  p[ParamId::wrapper_b] = Matrix(1, 1, 0.0);
  return p;
}

Matrix backbone(const ModelParams& params, const Matrix& x) {
  require_shape(x.cols() == params.input_dim(), "forward: input width != model input dimension");
  Matrix h = matmul(x, params[ParamId::backbone_w]);
  kernels::parallel::add_row_vector(h, params[ParamId::backbone_b]);
  for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
  return h;
}

ForwardPass forward(const ModelParams& params, const Matrix& x) {
  ForwardPass out;
  out.features = backbone(params, x);
  out.f_logits = matmul(out.features, params[ParamId::classifier_w]);
  kernels::parallel::add_row_vector(out.f_logits, params[ParamId::classifier_b]);
  out.g_logit = matmul(out.features, params[ParamId::detector_w]);
  kernels::parallel::add_row_vector(out.g_logit, params[ParamId::detector_b]);
  out.gamma_pre = matmul(out.features, params[ParamId::gamma_w]);
  kernels::parallel::add_row_vector(out.gamma_pre, params[ParamId::gamma_b]);
  out.gamma = Matrix(out.gamma_pre.rows(), out.gamma_pre.cols());
  for (std::size_t i = 0; i < out.gamma.size(); ++i) out.gamma[i] = softplus(out.gamma_pre[i]) + kGammaFloor;
  return out;
}

Matrix detector_logits(const ModelParams& params, const Matrix& x) {
  Matrix g = matmul(backbone(params, x), params[ParamId::detector_w]);
  kernels::parallel::add_row_vector(g, params[ParamId::detector_b]);
  return g;
}

double ood_probability(const ModelParams& params, std::span<const double> x) {
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return sigmoid(detector_logits(params, row)[0]);
}

}  // namespace imood
