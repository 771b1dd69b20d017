#include <cmath>
#include <random>

#include "doctest.h"
#include "imood/error.hpp"
#include "imood/imood.hpp"
#include "support/fixtures.hpp"

using namespace imood;

namespace {

double bce(double z, int t) { return t == 1 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

std::vector<double> random_simplex(std::size_t k, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double s = 0;
  for (double& v : p) s += (v = e(rng));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("class prior") {
  const std::vector<std::size_t> counts{1000, 599, 359, 215, 129, 77, 46, 28, 17, 10};
  const ClassPrior pi = class_prior(counts);
  double total = 0, sum = 0;
  for (auto c : counts) total += static_cast<double>(c);
  for (std::size_t y = 0; y < counts.size(); ++y) {
    CHECK(pi.pi[y] == doctest::Approx(counts[y] / total).epsilon(1e-15));
    sum += pi.pi[y];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  CHECK(class_prior(std::vector<std::size_t>{3, 1}).pi == std::vector<double>{0.75, 0.25});
  CHECK(class_prior(std::vector<std::size_t>{5, 5, 5, 5}).pi == std::vector<double>(4, 0.25));
  CHECK_THROWS_AS(class_prior(std::vector<std::size_t>{3, 0}), SpecError);
  CHECK_THROWS_AS(class_prior(std::vector<std::size_t>{}), SpecError);
}

TEST_CASE("beta examples and balanced identity") {
  const ClassPrior pi{{0.9, 0.1}};
  const std::vector<double> gamma{0.5, 0.5};
  const double head = compute_beta(std::vector<double>{1, 0}, gamma, pi);
  const double tail = compute_beta(std::vector<double>{0, 1}, gamma, pi);
  CHECK(head == doctest::Approx(0.5 / 0.9).epsilon(1e-15));
  CHECK(head == doctest::Approx(0.55556).epsilon(1e-5));
  CHECK(tail == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(tail > head);

  std::mt19937_64 rng(1);
  for (std::size_t k : {2u, 10u, 100u}) {
    const ClassPrior flat{std::vector<double>(k, 1.0 / k)};
    const std::vector<double> g(k, 1.0 / k);
    for (int trial = 0; trial < 200; ++trial)
      CHECK(std::abs(compute_beta(random_simplex(k, rng), g, flat) - 1.0) <= 1e-12);
  }
}

TEST_CASE("delta values") {
  for (double g : {-50.0, -1.0, 0.0, 3.0, 700.0}) CHECK(delta(g, 1.0) == 0.0);
  CHECK(delta(0.0, 2.0) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(delta(0.0, 2.0) == doctest::Approx(1.098612).epsilon(1e-6));
  CHECK(delta(0.0, 0.5) == doctest::Approx(std::log(1e-12)).epsilon(1e-12));
  CHECK(delta(0.0, 0.5) == doctest::Approx(-27.631).epsilon(1e-4));
  // direct formula where it does not overflow
  for (double g : {-3.0, 0.4, 2.0})
    for (double b : {0.7, 1.5, 4.0})
      CHECK(delta(g, b) == doctest::Approx(std::log(std::max((b - 1) * std::exp(g) + b, 1e-12))).epsilon(1e-13));
  CHECK(std::isfinite(delta(800.0, 3.0)));
  CHECK(delta(800.0, 3.0) == doctest::Approx(800.0 + std::log(2.0)));
  CHECK_THROWS_AS(delta(std::nan(""), 2.0), NumericError);
  CHECK_THROWS_AS(delta(0.0, 0.0), DomainError);
}

TEST_CASE("delta slope matches a finite difference") {
  for (double g : {-4.0, -0.3, 0.0, 1.2, 6.0})
    for (double b : {0.3, 0.9, 1.0, 1.7, 25.0}) {
      const DeltaValue d = delta_with_slope(g, b);
      if (d.clamped) {
        CHECK(d.slope == 0.0);
        continue;
      }
      const double h = 1e-6;
      const double fd = (delta(g + h, b) - delta(g - h, b)) / (2 * h);
      CHECK(d.slope == doctest::Approx(fd).epsilon(1e-6));
      CHECK(d.value == delta(g, b));
    }
}

TEST_CASE("calibrate_logit inverts the balanced relation") {
  CHECK(calibrate_logit(1.7, 1.0) == 1.7);
  CHECK(calibrate_logit(0.0, 2.0) == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
  CHECK(2.0 * sigmoid(calibrate_logit(0.0, 2.0)) == doctest::Approx(0.5).epsilon(1e-15));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ug(-10.0, 10.0), ub(1e-3, 5.0);
  int checked = 0;
  while (checked < 2000) {
    const double gb = ug(rng), b = ub(rng);
    if ((b - 1) * std::exp(gb) + b <= 1e-9) continue;
    ++checked;
    CHECK(std::abs(sigmoid(gb) - b * sigmoid(calibrate_logit(gb, b))) <= 1e-9);
  }
  // beta * sigma(g) would have to exceed 1
  CHECK_THROWS_AS(calibrate_logit(5.0, 0.5), DomainError);
}

TEST_CASE("loss_ood reference values and clipping") {
  CHECK(loss_ood(0.0, 1.0, 1).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss_ood(3.0, 1.0, 1).value == doctest::Approx(0.048587).epsilon(1e-5));
  CHECK(loss_ood(3.0, 1.0, 1).value == doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-15));
  // t = 1, beta < 1: delta clipped to 0, plain BCE
  ImoodTerms terms;
  const ScalarLoss l = loss_ood(0.4, 0.6, 1, {}, &terms);
  CHECK(terms.delta_raw < 0.0);
  CHECK(terms.delta_clipped == 0.0);
  CHECK(l.value == doctest::Approx(bce(0.4, 1)).epsilon(1e-15));
  CHECK(l.grad == doctest::Approx(sigmoid(0.4) - 1.0).epsilon(1e-15));
  // t = 0, beta > 1: clipped to 0 as well
  const ScalarLoss l0 = loss_ood(0.4, 3.0, 0, {}, &terms);
  CHECK(terms.delta_clipped == 0.0);
  CHECK(l0.value == doctest::Approx(bce(0.4, 0)).epsilon(1e-15));
  // unclipped: BCE(g - delta)
  const ScalarLoss l1 = loss_ood(0.4, 3.0, 1, {}, &terms);
  CHECK(l1.value == doctest::Approx(bce(0.4 - delta(0.4, 3.0), 1)).epsilon(1e-14));
  // with clipping disabled the raw delta is used
  const ScalarLoss raw = loss_ood(0.4, 0.6, 1, {false, false}, &terms);
  CHECK(raw.value == doctest::Approx(bce(0.4 - delta(0.4, 0.6), 1)).epsilon(1e-14));
}

TEST_CASE("loss_ood gradient matches finite differences and honours stop_delta_g") {
  for (int t : {0, 1})
    for (double g : {-3.0, -0.2, 0.5, 2.5})
      for (double b : {0.4, 1.0, 2.5, 40.0}) {
        const double h = 1e-6;
        const double fd = (loss_ood(g + h, b, t).value - loss_ood(g - h, b, t).value) / (2 * h);
        CHECK(loss_ood(g, b, t).grad == doctest::Approx(fd).epsilon(1e-6));
        // delta held constant: d/dg BCE(z, t) = sigma(z) - t
        ImoodTerms terms;
        const ScalarLoss s = loss_ood(g, b, t, {true, true}, &terms);
        CHECK(s.grad == doctest::Approx(sigmoid(g - terms.delta_clipped) - t).epsilon(1e-13));
      }
}

TEST_CASE("clip direction holds everywhere") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ug(-30.0, 30.0), ub(0.01, 50.0);
  for (int i = 0; i < 5000; ++i) {
    ImoodTerms terms;
    const double g = ug(rng), b = ub(rng);
    loss_ood(g, b, 1, {}, &terms);
    CHECK(terms.delta_clipped >= 0.0);
    loss_ood(g, b, 0, {}, &terms);
    CHECK(terms.delta_clipped <= 0.0);
  }
}

TEST_CASE("ID loss never decreases as beta grows past 1") {
  for (double g : {-5.0, -1.0, 0.0, 2.0, 8.0}) {
    double prev = loss_ood(g, 1.0, 1).value;
    for (double b = 1.05; b < 60.0; b *= 1.1) {
      const double cur = loss_ood(g, b, 1).value;
      CHECK(cur >= prev - 1e-15);
      prev = cur;
    }
  }
}

TEST_CASE("loss_gamma hinge") {
  CHECK(loss_gamma(20.0, 4.0).value == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(loss_gamma(20.0, 4.0).grad == doctest::Approx(sigmoid(20.0)).epsilon(1e-15));
  CHECK(loss_gamma(0.0, 2.0).value == 0.0);
  CHECK(loss_gamma(0.0, 1.5).value == 0.0);
  CHECK(loss_gamma(0.0, 1.5).grad == 0.0);
  CHECK(loss_gamma(1.0, 3.0).value == doctest::Approx(3.0 * sigmoid(1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("logit-adjusted cross-entropy") {
  const ClassPrior pi{{0.9, 0.1}};
  const VectorLoss l = logit_adjusted_ce(std::vector<double>{0, 0}, 1, pi, 1.0);
  CHECK(l.value == doctest::Approx(-std::log(0.1)).epsilon(1e-14));
  CHECK(l.value == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(l.grad[0] == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(l.grad[1] == doctest::Approx(-0.9).epsilon(1e-14));

  const std::vector<double> f{0.3, -1.0, 2.0};
  const double plain = -std::log(softmax(f)[2]);
  CHECK(logit_adjusted_ce(f, 2, ClassPrior{{0.5, 0.3, 0.2}}, 0.0).value == doctest::Approx(plain).epsilon(1e-14));
  const ClassPrior flat{{1.0 / 3, 1.0 / 3, 1.0 / 3}};
  for (double tau : {0.0, 0.5, 1.0, 3.0})
    CHECK(logit_adjusted_ce(f, 2, flat, tau).value == doctest::Approx(plain).epsilon(1e-14));
  CHECK_THROWS_AS(logit_adjusted_ce(f, 3, flat, 1.0), UsageError);
}

TEST_CASE("total_loss composition") {
  using namespace imood::testing;
  GradFixture f = make_grad_fixture(GammaMode::learned_input, ScorerVariant::bindisc, 3);
  const LossBreakdown full = total_loss(f.objective, f.params, f.batch);
  const LossWeights& w = f.objective.weights;
  CHECK(full.total.value == doctest::Approx(full.ce + w.lambda_ood * full.ood + w.lambda_gamma * full.gamma));

  // Classifier term alone: mean over ID rows of the adjusted CE.
  f.objective.weights.lambda_ood = f.objective.weights.lambda_gamma = 0.0;
  const LossBreakdown ce_only = total_loss(f.objective, f.params, f.batch);
  const ForwardPass pass = forward(f.params, f.batch.x);
  double ce = 0;
  int n_id = 0;
  for (std::size_t i = 0; i < f.batch.labels.size(); ++i)
    if (f.batch.labels[i] >= 0) {
      ce += logit_adjusted_ce(pass.f_logits.row(i), f.batch.labels[i], f.objective.prior, w.tau).value;
      ++n_id;
    }
  CHECK(ce_only.total.value == doctest::Approx(ce / n_id).epsilon(1e-13));
  for (ParamId id : {ParamId::detector_w, ParamId::detector_b, ParamId::gamma_w, ParamId::gamma_b})
    for (double v : ce_only.total.grads[id].values()) CHECK(v == 0.0);

  // Constant gamma with a flat prior: OOD term is plain BCE over all rows.
  GradFixture b = make_grad_fixture(GammaMode::constant, ScorerVariant::bindisc, 4);
  b.objective.prior = ClassPrior{std::vector<double>(4, 0.25)};
  const LossBreakdown lb = total_loss(b.objective, b.params, b.batch);
  const ForwardPass pb = forward(b.params, b.batch.x);
  double plain = 0;
  for (std::size_t i = 0; i < b.batch.labels.size(); ++i)
    plain += bce(pb.g_logit(i, 0), b.batch.labels[i] >= 0 ? 1 : 0);
  CHECK(lb.ood == doctest::Approx(plain / b.batch.labels.size()).epsilon(1e-12));
  for (double beta : lb.beta) CHECK(beta == doctest::Approx(1.0).epsilon(1e-12));

  Batch ood_only;
  ood_only.x = Matrix(2, 3);
  ood_only.labels = {-1, -1};
  CHECK_THROWS_AS(total_loss(f.objective, f.params, ood_only), UsageError);
  GradFixture m = make_grad_fixture(GammaMode::none, ScorerVariant::mahalanobis, 5);
  m.objective.stats = nullptr;
  CHECK_THROWS_AS(total_loss(m.objective, m.params, m.batch), UsageError);
}

TEST_CASE("total_loss gradients pass finite differences for every scorer and gamma mode") {
  using namespace imood::testing;
  for (ScorerVariant s : {ScorerVariant::bindisc, ScorerVariant::energy, ScorerVariant::msp, ScorerVariant::mahalanobis})
    for (GammaMode g : {GammaMode::none, GammaMode::constant, GammaMode::learned_class, GammaMode::learned_input}) {
      CAPTURE(scorer_name(s));
      CAPTURE(gamma_mode_name(g));
      const GradFixture f = make_grad_fixture(g, s, 21);
      const StopGradValues frozen = freeze(f.objective, f.params, f.batch);
      GradCheckOptions opt;
      opt.probes = 120;
      const GradCheckReport r = check_gradient(frozen_evaluator(f, frozen), f.params.tensors, opt);
      CHECK_MESSAGE(r.passed, r.summary());
      // Live and frozen evaluation agree at the freeze point.
      CHECK(total_loss(f.objective, f.params, f.batch).total.value ==
            doctest::Approx(total_loss(f.objective, f.params, f.batch, &frozen).total.value).epsilon(1e-14));
    }
}

TEST_CASE("stop-gradient paths carry exactly zero gradient") {
  using namespace imood::testing;
  for (ScorerVariant s : {ScorerVariant::bindisc, ScorerVariant::energy, ScorerVariant::msp, ScorerVariant::mahalanobis}) {
    CAPTURE(scorer_name(s));
    // L_ood alone never reaches the gamma head.
    GradFixture f = make_grad_fixture(GammaMode::learned_input, s, 31);
    f.objective.weights.lambda_gamma = 0.0;
    const LossBreakdown ood = total_loss(f.objective, f.params, f.batch);
    for (ParamId id : {ParamId::gamma_w, ParamId::gamma_b})
      for (double v : ood.total.grads[id].values()) CHECK(v == 0.0);

    // L_gamma alone never reaches the detector head or the wrapper.
    f.objective.weights.lambda_gamma = 1.0;
    f.objective.weights.lambda_ood = 0.0;
    f.objective.weights.tau = 0.0;
    const LossBreakdown gam = total_loss(f.objective, f.params, f.batch);
    CHECK(gam.gamma > 0.0);
    for (ParamId id : {ParamId::detector_w, ParamId::detector_b, ParamId::wrapper_w, ParamId::wrapper_b})
      for (double v : gam.total.grads[id].values()) CHECK(v == 0.0);

    // Inactive hinge: tiny gamma keeps beta * sigma(g) below 1 on every row.
    GradFixture q = make_grad_fixture(GammaMode::learned_class, s, 32);
    q.params[ParamId::gamma_b] = Matrix(1, 4, -40.0);
    const LossBreakdown idle = total_loss(q.objective, q.params, q.batch);
    CHECK(idle.gamma == 0.0);
    for (ParamId id : {ParamId::gamma_w, ParamId::gamma_b})
      for (double v : idle.total.grads[id].values()) CHECK(v == 0.0);
    // and finite differences agree that nothing moves
    const StopGradValues frozen = freeze(q.objective, q.params, q.batch);
    GradCheckOptions opt;
    opt.only = {ParamId::gamma_b};
    opt.probes = 8;
    CHECK(check_gradient(frozen_evaluator(q, frozen), q.params.tensors, opt).passed);
  }
}

TEST_CASE("total_loss is deterministic") {
  using namespace imood::testing;
  const GradFixture f = make_grad_fixture(GammaMode::learned_input, ScorerVariant::mahalanobis, 41, 2, 32, 10, 64, 64);
  const LossBreakdown a = total_loss(f.objective, f.params, f.batch);
  const LossBreakdown b = total_loss(f.objective, f.params, f.batch);
  CHECK(a.total.value == b.total.value);
  CHECK(a.total.grads == b.total.grads);
}

TEST_CASE("gamma mode names") {
  for (GammaMode m : {GammaMode::none, GammaMode::constant, GammaMode::learned_class, GammaMode::learned_input})
    CHECK(gamma_mode_from_name(gamma_mode_name(m)) == m);
  CHECK(std::string(gamma_mode_name(GammaMode::constant)) == "const");
  CHECK_THROWS_AS(gamma_mode_from_name("bogus"), SpecError);
}
