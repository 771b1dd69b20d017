#include "imood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "imood/error.hpp"
#include "json.hpp"

namespace imood {

namespace {

void check_scores(const ScoreSet& s) {
  if (s.id_scores.empty() || s.ood_scores.empty()) throw UsageError("score set needs ID and OOD scores");
  for (double v : s.id_scores)
    if (!std::isfinite(v)) throw UsageError("non-finite ID score");
  for (double v : s.ood_scores)
    if (!std::isfinite(v)) throw UsageError("non-finite OOD score");
}

}  // namespace

double auroc(const ScoreSet& s) {
  check_scores(s);
  std::vector<double> ood = s.ood_scores;
  std::sort(ood.begin(), ood.end());
  // Half-integer pair counts are exact in a double well past any realistic n.
  double wins = 0.0;
  for (double v : s.id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), v);
    const auto hi = std::upper_bound(lo, ood.end(), v);
    wins += static_cast<double>(lo - ood.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(s.id_scores.size()) * static_cast<double>(s.ood_scores.size()));
}

double aupr(const ScoreSet& s) {
  check_scores(s);
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.id_scores.size() + s.ood_scores.size());
  for (double v : s.id_scores) all.emplace_back(v, true);
  for (double v : s.ood_scores) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const double n_id = static_cast<double>(s.id_scores.size());
  double tp = 0.0, fp = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    const double tp_prev = tp;
    std::size_t j = i;
    for (; j < all.size() && all[j].first == all[i].first; ++j) (all[j].second ? tp : fp) += 1.0;
    if (tp > tp_prev) ap += ((tp - tp_prev) / n_id) * (tp / (tp + fp));
    i = j;
  }
  return ap;
}

double tpr_threshold(std::span<const double> id_scores, double tpr) {
  if (id_scores.empty()) throw UsageError("tpr_threshold: no ID scores");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw UsageError("tpr must lie in (0, 1]");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    // Count of scores >= sorted[k] includes any ties after position k.
    std::size_t count = k + 1;
    while (count < sorted.size() && sorted[count] == sorted[k]) ++count;
    if (static_cast<double>(count) / n >= tpr) return sorted[k];
  }
  return sorted.back();
}

double fpr_at_tpr(const ScoreSet& s, double tpr) {
  check_scores(s);
  const double lambda = tpr_threshold(s.id_scores, tpr);
  const auto above = std::count_if(s.ood_scores.begin(), s.ood_scores.end(), [lambda](double v) { return v >= lambda; });
  return static_cast<double>(above) / static_cast<double>(s.ood_scores.size());
}

double ber(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw UsageError("ber: predictions/labels length mismatch");
  if (num_classes == 0) throw UsageError("ber: no classes");
  std::vector<std::size_t> total(num_classes, 0), wrong(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) throw UsageError("ber: label out of range");
    const auto y = static_cast<std::size_t>(labels[i]);
    ++total[y];
    if (predictions[i] != labels[i]) ++wrong[y];
  }
  double sum = 0.0;
  for (std::size_t y = 0; y < num_classes; ++y) {
    if (total[y] == 0) throw UsageError("ber: class " + std::to_string(y) + " has no samples");
    sum += static_cast<double>(wrong[y]) / static_cast<double>(total[y]);
  }
  return sum / static_cast<double>(num_classes);
}

ErrorHistogram error_stats(std::span<const double> id_scores, std::span<const int> id_labels,
                           std::span<const double> ood_scores, std::span<const int> ood_predictions,
                           std::size_t num_classes, double ood_detect_rate) {
  if (id_scores.empty() || ood_scores.empty()) throw UsageError("error_stats: empty inputs");
  if (id_scores.size() != id_labels.size() || ood_scores.size() != ood_predictions.size())
    throw UsageError("error_stats: score/label length mismatch");
  if (!(ood_detect_rate > 0.0 && ood_detect_rate <= 1.0)) throw UsageError("ood_detect_rate must lie in (0, 1]");

  std::vector<double> sorted(ood_scores.begin(), ood_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  std::size_t k = 1;
  while (k < sorted.size() && static_cast<double>(k) / m < ood_detect_rate) ++k;

  ErrorHistogram hist;
  hist.threshold = sorted[k - 1];
  hist.wrong_id_by_class.assign(num_classes, 0);
  hist.wrong_ood_by_class.assign(num_classes, 0);
  for (std::size_t i = 0; i < id_scores.size(); ++i) {
    if (id_labels[i] < 0 || static_cast<std::size_t>(id_labels[i]) >= num_classes)
      throw UsageError("error_stats: ID label out of range");
    if (id_scores[i] < hist.threshold) ++hist.wrong_id_by_class[static_cast<std::size_t>(id_labels[i])];
  }
  for (std::size_t i = 0; i < ood_scores.size(); ++i) {
    if (ood_predictions[i] < 0 || static_cast<std::size_t>(ood_predictions[i]) >= num_classes)
      throw UsageError("error_stats: predicted class out of range");
    if (ood_scores[i] > hist.threshold) ++hist.wrong_ood_by_class[static_cast<std::size_t>(ood_predictions[i])];
  }
  return hist;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["auroc"] = auroc;
  j["aupr"] = aupr;
  j["fpr95"] = fpr95;
  j["ber"] = ber;
  j["macro_acc"] = macro_acc;
  j["error_hist"] = {{"threshold", error_hist.threshold},
                     {"wrong_id_by_class", error_hist.wrong_id_by_class},
                     {"wrong_ood_by_class", error_hist.wrong_ood_by_class}};
  j["conventions"] = {{"aupr_positive", "id"}};
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.auroc = j.at("auroc").get<double>();
    r.aupr = j.at("aupr").get<double>();
    r.fpr95 = j.at("fpr95").get<double>();
    r.ber = j.at("ber").get<double>();
    r.macro_acc = j.at("macro_acc").get<double>();
    const auto& h = j.at("error_hist");
    r.error_hist.threshold = h.at("threshold").get<double>();
    r.error_hist.wrong_id_by_class = h.at("wrong_id_by_class").get<std::vector<std::size_t>>();
    r.error_hist.wrong_ood_by_class = h.at("wrong_ood_by_class").get<std::vector<std::size_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

}  // namespace imood
