#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "imood/error.hpp"
#include "imood/pipeline.hpp"

namespace imood {

ScoredData score_dataset(const TrainedModel& model, const LabeledDataset& data) {
  const ForwardPass pass = forward(model.params, data.features);
  const ClassStats* stats = model.stats ? &*model.stats : nullptr;
  ScoredData out;
  out.logits = scorer_logits(model.scorer_kind(), pass, stats);
  out.predictions.reserve(pass.size());
  for (std::size_t i = 0; i < pass.size(); ++i) {
    const auto row = pass.f_logits.row(i);
    out.predictions.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

MetricsReport evaluate(const TrainedModel& model, const LabeledDataset& id_test, const LabeledDataset& ood_test,
                       double ood_detect_rate) {
  const std::size_t k = model.params.num_classes();
  const ScoredData id = score_dataset(model, id_test);
  const ScoredData ood = score_dataset(model, ood_test);
  const ScoreSet scores{id.logits, ood.logits};
  MetricsReport r;
  r.auroc = auroc(scores);
  r.aupr = aupr(scores);
  r.fpr95 = fpr_at_tpr(scores, 0.95);
  r.ber = ber(id.predictions, id_test.labels, k);
  r.macro_acc = 1.0 - r.ber;
  r.error_hist = error_stats(id.logits, id_test.labels, ood.logits, ood.predictions, k, ood_detect_rate);
  return r;
}

std::vector<double> balanced_id_mass(const TrainedModel& model, const LabeledDataset& data) {
  if (model.prior.size() != model.params.num_classes()) throw UsageError("model carries no class prior");
  const ForwardPass pass = forward(model.params, data.features);
  const ClassStats* stats = model.stats ? &*model.stats : nullptr;
  const auto logits = scorer_logits(model.scorer_kind(), pass, stats);
  std::vector<double> out(pass.size());
  for (std::size_t i = 0; i < pass.size(); ++i) {
    const auto p = softmax(pass.f_logits.row(i));
    const double beta = model.gamma_mode == GammaMode::none
                            ? 1.0
                            : compute_beta(p, gamma_for_row(model.gamma_mode, model.params, pass, i), model.prior);
    out[i] = beta * sigmoid(logits[i]);
  }
  return out;
}

AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "gamma") return AblationAxis::gamma;
  if (name == "scorer") return AblationAxis::scorer;
  throw SpecError("unknown ablation axis '" + name + "' (expected gamma or scorer)");
}

std::vector<std::string> axis_variants(AblationAxis axis) {
  if (axis == AblationAxis::gamma) return {"none", "const", "learned_class", "learned_input"};
  return {"bindisc", "msp", "energy", "mahalanobis"};
}

TrainConfig apply_variant(TrainConfig base, AblationAxis axis, const std::string& variant) {
  if (axis == AblationAxis::gamma)
    base.gamma_mode = gamma_mode_from_name(variant);
  else
    base.scorer.kind = scorer_from_name(variant);
  return base;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void metric_row(std::ostringstream& os, const std::string& variant, const std::string& seed, const MetricsReport& r) {
  os << variant << ',' << seed << ',' << fmt(r.auroc) << ',' << fmt(r.aupr) << ',' << fmt(r.fpr95) << ','
     << fmt(r.ber) << ',' << fmt(r.macro_acc) << '\n';
}

std::size_t grid_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("IMOOD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace

std::string GridResult::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,auroc,aupr,fpr95,ber,macro_acc\n";
  const double nan = std::nan("");
  for (const GridCell& c : cells) {
    if (c.record.ok) {
      metric_row(os, c.variant, std::to_string(c.seed), c.record.report);
    } else {
      MetricsReport failed;
      failed.auroc = failed.aupr = failed.fpr95 = failed.ber = failed.macro_acc = nan;
      metric_row(os, c.variant, std::to_string(c.seed), failed);
    }
  }
  for (const GridSummary& s : summary) {
    metric_row(os, s.variant, "mean", s.mean);
    metric_row(os, s.variant, "std", s.stddev);
  }
  return os.str();
}

const GridSummary& GridResult::summary_for(const std::string& variant) const {
  for (const GridSummary& s : summary)
    if (s.variant == variant) return s;
  throw UsageError("no summary for variant '" + variant + "'");
}

GridResult run_ablation_grid(const TrainConfig& base, const Benchmark& bench, AblationAxis axis,
                             const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  if (seeds.size() < 2) throw UsageError("an ablation grid needs at least 2 seeds");
  const auto variants = axis_variants(axis);
  GridResult result;
  for (const auto& v : variants)
    for (std::uint64_t s : seeds) result.cells.push_back({v, s, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      GridCell& cell = result.cells[i];
      try {
        TrainConfig cfg = apply_variant(base, axis, cell.variant);
        cfg.seed = cell.seed;
        cfg.model_seed.reset();
        cell.record = train(cfg, bench).record;
      } catch (const std::exception& e) {
        cell.record.ok = false;
        cell.record.error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(grid_threads(threads), result.cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  for (const auto& v : variants) {
    GridSummary s;
    s.variant = v;
    std::vector<const MetricsReport*> ok;
    for (const GridCell& c : result.cells)
      if (c.variant == v && c.record.ok) ok.push_back(&c.record.report);
    s.runs = ok.size();
    auto stat = [&ok](double MetricsReport::*field, double& mean, double& sd) {
      if (ok.empty()) {
        mean = sd = std::nan("");
        return;
      }
      double sum = 0.0;
      for (const MetricsReport* r : ok) sum += r->*field;
      mean = sum / static_cast<double>(ok.size());
      double ss = 0.0;
      for (const MetricsReport* r : ok) ss += (r->*field - mean) * (r->*field - mean);
      sd = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;
    };
    stat(&MetricsReport::auroc, s.mean.auroc, s.stddev.auroc);
    stat(&MetricsReport::aupr, s.mean.aupr, s.stddev.aupr);
    stat(&MetricsReport::fpr95, s.mean.fpr95, s.stddev.fpr95);
    stat(&MetricsReport::ber, s.mean.ber, s.stddev.ber);
    stat(&MetricsReport::macro_acc, s.mean.macro_acc, s.stddev.macro_acc);
    result.summary.push_back(s);
  }
  return result;
}

}  // namespace imood
