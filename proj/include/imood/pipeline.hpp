#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imood/data.hpp"
#include "imood/imood.hpp"
#include "imood/metrics.hpp"
#include "imood/model.hpp"
#include "imood/scorers.hpp"
#include "json.hpp"

namespace imood {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct OodSplitSpec {
  std::size_t n = 1000;
  OodMode mode = OodMode::uniform_box;
  std::uint64_t seed = 0;
};

struct DataConfig {
  LongTailSpec longtail;
  std::size_t n_test_per_class = 100;
  std::uint64_t id_test_seed = 1001;
  OodSplitSpec ood_train{5000, OodMode::uniform_box, 2002};
  OodSplitSpec ood_test{1000, OodMode::uniform_box, 3003};      // near OOD, the headline split
  OodSplitSpec ood_test_far{1000, OodMode::ring, 4004};         // far OOD
};

struct ScorerConfig {
  ScorerVariant kind = ScorerVariant::bindisc;
  double reg = 1e-3;  // ridge = reg * trace(cov) / h
};

struct OptimizerConfig {
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  DataConfig data;
  std::size_t hidden = 64;
  ScorerConfig scorer;
  LossWeights loss;
  GammaMode gamma_mode = GammaMode::learned_input;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;                  // batch shuffling, and parameter init unless model_seed is set
  std::optional<std::uint64_t> model_seed;

  std::uint64_t init_seed() const noexcept { return model_seed.value_or(seed); }

  /// Throws SpecError on any invalid field.
  void validate() const;
};

/// Parses a config JSON document. Missing keys keep their defaults; unknown
/// keys are rejected with SpecError.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const TrainConfig& c);
TrainConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Data and model bundles
// ---------------------------------------------------------------------------

struct Benchmark {
  LabeledDataset id_train;
  LabeledDataset id_test;
  LabeledDataset ood_train;
  LabeledDataset ood_test;
  std::optional<LabeledDataset> ood_test_far;
};

Benchmark make_benchmark(const DataConfig& data);

/// Everything inference needs: weights, scorer choice and, for the
/// mahalanobis scorer, the class statistics fitted on the final features.
struct TrainedModel {
  ModelParams params;
  ScorerVariant scorer = ScorerVariant::bindisc;
  GammaMode gamma_mode = GammaMode::learned_input;
  std::optional<ClassStats> stats;
  ClassPrior prior;  // training label frequencies

  ScorerKind scorer_kind() const { return ScorerKind::from_params(scorer, params); }
};

/// imood-ckpt-v1 JSON text. Canonical: equal models give equal bytes.
std::string checkpoint_to_json(const TrainedModel& model);
TrainedModel checkpoint_from_json(const std::string& text);
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

/// Git blob hash (SHA-1 over "blob <len>\0<bytes>") as 40 hex digits.
std::string content_hash(const std::string& bytes);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// lr * (1 + cos(pi * step / (total - 1))) / 2; reaches 0 on the last step.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

/// Draws batches of `batch_size / 2` ID rows and `batch_size / 2` OOD rows.
/// ID rows follow a fresh seeded permutation per epoch; OOD rows cycle
/// through their own permutation.
class BatchSampler {
 public:
  BatchSampler(const LabeledDataset& id, const LabeledDataset& ood, std::size_t batch_size, std::uint64_t seed);

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  void start_epoch(std::size_t epoch);
  Batch next();

 private:
  const LabeledDataset& id_;
  const LabeledDataset& ood_;
  std::size_t half_;
  std::size_t steps_per_epoch_;
  std::uint64_t seed_;
  std::vector<std::size_t> id_order_, ood_order_;
  std::size_t id_cursor_ = 0, ood_cursor_ = 0, ood_pass_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double ce = 0.0;
  double ood = 0.0;
  double gamma = 0.0;
};

struct RunRecord {
  nlohmann::ordered_json config;
  std::vector<EpochLog> epochs;
  MetricsReport report;                   // near-OOD test split
  std::optional<MetricsReport> report_far;
  double wall_seconds = 0.0;
  std::string checkpoint_hash;
  bool ok = true;
  std::string error;

  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  TrainedModel model;
  RunRecord record;
};

/// Trains on `bench` under `config`. Throws NumericError with epoch/step
/// diagnostics if the loss becomes non-finite; SpecError if ID labels fall
/// outside 0..K-1.
TrainResult train(const TrainConfig& config, const Benchmark& bench);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ScoredData {
  std::vector<double> logits;    // detector logits
  std::vector<int> predictions;  // argmax of the classifier logits
};

ScoredData score_dataset(const TrainedModel& model, const LabeledDataset& data);

MetricsReport evaluate(const TrainedModel& model, const LabeledDataset& id_test, const LabeledDataset& ood_test,
                       double ood_detect_rate = 0.95);

/// beta(x) * sigma(logit(x)) per row: the balanced ID probability implied by
/// the trained gamma factors. Values above 1 violate the gamma constraint.
std::vector<double> balanced_id_mass(const TrainedModel& model, const LabeledDataset& data);

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

enum class AblationAxis { gamma, scorer };
AblationAxis ablation_axis_from_name(const std::string& name);

struct GridCell {
  std::string variant;
  std::uint64_t seed = 0;
  RunRecord record;
};

struct GridSummary {
  std::string variant;
  std::size_t runs = 0;  // successful runs
  MetricsReport mean;
  MetricsReport stddev;  // sample standard deviation
};

struct GridResult {
  std::vector<GridCell> cells;  // variant-major, seeds in the given order
  std::vector<GridSummary> summary;

  /// `variant,seed,auroc,aupr,fpr95,ber,macro_acc`; summary rows use seed
  /// `mean` and `std`.
  std::string to_csv() const;
  const GridSummary& summary_for(const std::string& variant) const;
};

/// Variant names along an axis, in output order.
std::vector<std::string> axis_variants(AblationAxis axis);

/// One run per (variant, seed). Failed runs are recorded and skipped in the
/// summary. Cells run on up to `threads` workers; 0 reads IMOOD_THREADS
/// (default 1).
GridResult run_ablation_grid(const TrainConfig& base, const Benchmark& bench, AblationAxis axis,
                             const std::vector<std::uint64_t>& seeds, std::size_t threads = 0);

/// Sets one variant of `axis` on a copy of `base`.
TrainConfig apply_variant(TrainConfig base, AblationAxis axis, const std::string& variant);

}  // namespace imood
