#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "imood/error.hpp"
#include "imood/pipeline.hpp"

namespace imood {

Benchmark make_benchmark(const DataConfig& data) {
  Benchmark b;
  b.id_train = synth_longtail_id(data.longtail);
  b.id_test = synth_balanced_id(data.longtail, data.n_test_per_class, data.id_test_seed, Split::id_test);
  b.ood_train = synth_ood(data.longtail, data.ood_train.n, data.ood_train.mode, data.ood_train.seed, Split::ood_train);
  b.ood_test = synth_ood(data.longtail, data.ood_test.n, data.ood_test.mode, data.ood_test.seed, Split::ood_test);
  b.ood_test_far =
      synth_ood(data.longtail, data.ood_test_far.n, data.ood_test_far.mode, data.ood_test_far.seed, Split::ood_test);
  return b;
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

BatchSampler::BatchSampler(const LabeledDataset& id, const LabeledDataset& ood, std::size_t batch_size,
                           std::uint64_t seed)
    : id_(id), ood_(ood), half_(batch_size / 2), seed_(seed) {
  if (batch_size < 2 || batch_size % 2 != 0) throw SpecError("batch size must be even and >= 2");
  if (id.size() == 0 || ood.size() == 0) throw UsageError("batch sampler needs ID and OOD rows");
  if (id.dim() != ood.dim()) throw DimensionError("ID and OOD feature widths differ");
  steps_per_epoch_ = (id.size() + half_ - 1) / half_;
  auto rng = stream_rng(seed_, 1, 0);
  ood_order_ = permutation(ood.size(), rng);
}

void BatchSampler::start_epoch(std::size_t epoch) {
  auto rng = stream_rng(seed_, 0, epoch);
  id_order_ = permutation(id_.size(), rng);
  id_cursor_ = 0;
}

Batch BatchSampler::next() {
  if (id_order_.empty()) start_epoch(0);
  const std::size_t d = id_.dim();
  Batch b;
  b.x = Matrix(2 * half_, d);
  b.labels.reserve(2 * half_);
  for (std::size_t r = 0; r < half_; ++r) {
    // The last batch of an epoch wraps to the front of the permutation.
    const std::size_t src = id_order_[id_cursor_ % id_order_.size()];
    ++id_cursor_;
    std::copy_n(id_.features.row(src).begin(), d, b.x.row(r).begin());
    b.labels.push_back(id_.labels[src]);
  }
  for (std::size_t r = 0; r < half_; ++r) {
    if (ood_cursor_ == ood_order_.size()) {
      auto rng = stream_rng(seed_, 1, ++ood_pass_);
      ood_order_ = permutation(ood_.size(), rng);
      ood_cursor_ = 0;
    }
    const std::size_t src = ood_order_[ood_cursor_++];
    std::copy_n(ood_.features.row(src).begin(), d, b.x.row(half_ + r).begin());
    b.labels.push_back(kOodLabel);
  }
  return b;
}

namespace {

struct Adam {
  OptimizerConfig cfg;
  ParamSet m, v;
  std::size_t t = 0;

  Adam(const OptimizerConfig& c, const ParamSet& like)
      : cfg(c), m(ParamSet::zeros_like(like)), v(ParamSet::zeros_like(like)) {}

  void step(ParamSet& params, const ParamSet& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < kParamCount; ++k) {
      Matrix& p = params.tensors[k];
      const Matrix& g = grads.tensors[k];
      Matrix& mk = m.tensors[k];
      Matrix& vk = v.tensors[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        mk[i] = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * g[i];
        vk[i] = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + cfg.eps);
      }
    }
  }
};

void check_labels(const LabeledDataset& d, std::size_t k, const char* what) {
  for (int y : d.labels)
    if (y >= static_cast<int>(k))
      throw SpecError(std::string(what) + " label " + std::to_string(y) + " exceeds K = " + std::to_string(k));
}

ClassStats refit_stats(const TrainConfig& config, const ModelParams& params, const LabeledDataset& id_train) {
  return fit_class_stats_relative(backbone(params, id_train.features), id_train.labels, params.num_classes(),
                                  config.scorer.reg);
}

}  // namespace

TrainResult train(const TrainConfig& config, const Benchmark& bench) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t k = config.data.longtail.num_classes;
  const std::size_t d = bench.id_train.dim();
  check_labels(bench.id_train, k, "id-train");
  check_labels(bench.id_test, k, "id-test");
  bench.id_train.validate();
  bench.ood_train.validate();

  const auto counts = count_classes(bench.id_train.labels, k);
  Objective objective;
  objective.prior = class_prior(counts);
  objective.gamma_mode = config.gamma_mode;
  objective.scorer = config.scorer.kind;
  objective.weights = config.loss;

  TrainResult result;
  TrainedModel& model = result.model;
  model.params = init_params(d, config.hidden, k, config.init_seed());
  model.scorer = config.scorer.kind;
  model.gamma_mode = config.gamma_mode;
  model.prior = objective.prior;

  BatchSampler sampler(bench.id_train, bench.ood_train, config.optimizer.batch_size, config.seed);
  const std::size_t steps = sampler.steps_per_epoch();
  const std::size_t total_steps = steps * config.optimizer.epochs;
  Adam adam(config.optimizer, model.params.tensors);
  const std::size_t half = config.optimizer.batch_size / 2;

  RunRecord& rec = result.record;
  rec.config = config_to_json(config);
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    std::optional<ClassStats> stats;
    if (config.scorer.kind == ScorerVariant::mahalanobis) {
      stats = refit_stats(config, model.params, bench.id_train);
      objective.stats = &*stats;
    }
    sampler.start_epoch(epoch);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s, ++global) {
      const Batch batch = sampler.next();
      const auto n_ood = static_cast<std::size_t>(std::count(batch.labels.begin(), batch.labels.end(), kOodLabel));
      if (n_ood != half || batch.labels.size() != 2 * half)
        throw std::logic_error("batch composition violated: expected equal ID and OOD halves");

      const LossBreakdown loss = total_loss(objective, model.params, batch);
      if (!std::isfinite(loss.total.value) || !loss.total.grads.all_finite()) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << s << " (ce=" << loss.ce << " ood=" << loss.ood
           << " gamma=" << loss.gamma << ")";
        throw NumericError(os.str());
      }
      adam.step(model.params.tensors, loss.total.grads, cosine_lr(config.optimizer.lr, global, total_steps));
      log.total += loss.total.value;
      log.ce += loss.ce;
      log.ood += loss.ood;
      log.gamma += loss.gamma;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    log.total *= inv;
    log.ce *= inv;
    log.ood *= inv;
    log.gamma *= inv;
    rec.epochs.push_back(log);
    objective.stats = nullptr;
  }

  if (config.scorer.kind == ScorerVariant::mahalanobis) model.stats = refit_stats(config, model.params, bench.id_train);

  rec.report = evaluate(model, bench.id_test, bench.ood_test);
  if (bench.ood_test_far) rec.report_far = evaluate(model, bench.id_test, *bench.ood_test_far);
  rec.checkpoint_hash = content_hash(checkpoint_to_json(model));
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

nlohmann::ordered_json RunRecord::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["ok"] = ok;
  if (!ok) j["error"] = error;
  nlohmann::ordered_json ep = nlohmann::ordered_json::array();
  for (const EpochLog& e : epochs)
    ep.push_back({{"epoch", e.epoch}, {"total", e.total}, {"ce", e.ce}, {"ood", e.ood}, {"gamma", e.gamma}});
  j["epochs"] = std::move(ep);
  if (ok) {
    j["report"] = nlohmann::ordered_json::parse(report.to_json());
    if (report_far) j["report_far"] = nlohmann::ordered_json::parse(report_far->to_json());
  }
  j["wall_seconds"] = wall_seconds;
  j["checkpoint_hash"] = checkpoint_hash;
  return j;
}

}  // namespace imood
