#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "imood/error.hpp"
#include "imood/pipeline.hpp"

namespace imood {

namespace {

using json = nlohmann::json;

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw SpecError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw SpecError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SpecError("config key '" + where + "." + key + "' has the wrong type");
  }
}

void read_ood(const json& j, const char* key, OodSplitSpec& out) {
  if (!j.contains(key)) return;
  const std::string where = std::string("data.") + key;
  const json& o = j.at(key);
  only_keys(o, where, {"n", "mode", "seed"});
  read(o, "n", out.n, where);
  read(o, "seed", out.seed, where);
  if (o.contains("mode")) out.mode = ood_mode_from_name(o.at("mode").get<std::string>());
}

nlohmann::ordered_json ood_json(const OodSplitSpec& s) {
  return {{"n", s.n}, {"mode", ood_mode_name(s.mode)}, {"seed", s.seed}};
}

}  // namespace

void TrainConfig::validate() const {
  data.longtail.validate();
  if (data.n_test_per_class == 0) throw SpecError("data.n_test_per_class must be >= 1");
  if (data.ood_train.n == 0 || data.ood_test.n == 0 || data.ood_test_far.n == 0)
    throw SpecError("OOD split sizes must be >= 1");
  if (hidden == 0) throw SpecError("model.h must be >= 1");
  if (!(scorer.reg > 0.0)) throw SpecError("scorer.reg must be > 0");
  if (!(loss.lambda_ood >= 0.0) || !(loss.lambda_gamma >= 0.0) || !(loss.tau >= 0.0))
    throw SpecError("loss weights must be >= 0");
  if (!(optimizer.lr > 0.0)) throw SpecError("optimizer.lr must be > 0");
  if (optimizer.epochs == 0) throw SpecError("optimizer.epochs must be >= 1");
  if (optimizer.batch_size < 2 || optimizer.batch_size % 2 != 0)
    throw SpecError("optimizer.batch_size must be even and >= 2");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw SpecError("optimizer moment decays must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw SpecError("optimizer.eps must be > 0");
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  only_keys(j, "", {"data", "model", "scorer", "loss", "gamma_mode", "optimizer", "seed"});
  if (j.contains("data")) {
    const json& d = j.at("data");
    only_keys(d, "data", {"k", "d", "n_max", "rho", "seed", "cluster_radius", "cluster_spread", "n_test_per_class",
                          "id_test_seed", "ood_train", "ood_test", "ood_test_far"});
    auto& lt = c.data.longtail;
    read(d, "k", lt.num_classes, "data");
    read(d, "d", lt.dim, "data");
    read(d, "n_max", lt.n_max, "data");
    read(d, "rho", lt.rho, "data");
    read(d, "seed", lt.seed, "data");
    read(d, "cluster_radius", lt.cluster_radius, "data");
    read(d, "cluster_spread", lt.cluster_spread, "data");
    read(d, "n_test_per_class", c.data.n_test_per_class, "data");
    read(d, "id_test_seed", c.data.id_test_seed, "data");
    read_ood(d, "ood_train", c.data.ood_train);
    read_ood(d, "ood_test", c.data.ood_test);
    read_ood(d, "ood_test_far", c.data.ood_test_far);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    only_keys(m, "model", {"d", "h", "k", "seed"});
    read(m, "h", c.hidden, "model");
    std::size_t d = c.data.longtail.dim, k = c.data.longtail.num_classes;
    read(m, "d", d, "model");
    read(m, "k", k, "model");
    if (d != c.data.longtail.dim || k != c.data.longtail.num_classes)
      throw SpecError("model.d / model.k disagree with data.d / data.k");
    if (m.contains("seed")) {
      std::uint64_t s = 0;
      read(m, "seed", s, "model");
      c.model_seed = s;
    }
  }
  if (j.contains("scorer")) {
    const json& s = j.at("scorer");
    only_keys(s, "scorer", {"kind", "reg"});
    if (s.contains("kind")) c.scorer.kind = scorer_from_name(s.at("kind").get<std::string>());
    read(s, "reg", c.scorer.reg, "scorer");
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    only_keys(l, "loss", {"lambda_ood", "lambda_gamma", "tau", "clip_delta", "stop_delta_g"});
    read(l, "lambda_ood", c.loss.lambda_ood, "loss");
    read(l, "lambda_gamma", c.loss.lambda_gamma, "loss");
    read(l, "tau", c.loss.tau, "loss");
    read(l, "clip_delta", c.loss.clip_delta, "loss");
    read(l, "stop_delta_g", c.loss.stop_delta_g, "loss");
  }
  if (j.contains("gamma_mode")) c.gamma_mode = gamma_mode_from_name(j.at("gamma_mode").get<std::string>());
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    only_keys(o, "optimizer", {"kind", "lr", "epochs", "batch_size", "beta1", "beta2", "eps", "schedule"});
    if (o.contains("kind") && o.at("kind") != "adam") throw SpecError("optimizer.kind must be \"adam\"");
    if (o.contains("schedule") && o.at("schedule") != "cosine") throw SpecError("optimizer.schedule must be \"cosine\"");
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "epochs", c.optimizer.epochs, "optimizer");
    read(o, "batch_size", c.optimizer.batch_size, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "eps", c.optimizer.eps, "optimizer");
  }
  read(j, "seed", c.seed, "");
  c.validate();
  return c;
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  const auto& lt = c.data.longtail;
  nlohmann::ordered_json j;
  j["data"] = {{"k", lt.num_classes},
               {"d", lt.dim},
               {"n_max", lt.n_max},
               {"rho", lt.rho},
               {"seed", lt.seed},
               {"cluster_radius", lt.cluster_radius},
               {"cluster_spread", lt.cluster_spread},
               {"n_test_per_class", c.data.n_test_per_class},
               {"id_test_seed", c.data.id_test_seed},
               {"ood_train", ood_json(c.data.ood_train)},
               {"ood_test", ood_json(c.data.ood_test)},
               {"ood_test_far", ood_json(c.data.ood_test_far)}};
  j["model"] = {{"d", lt.dim}, {"h", c.hidden}, {"k", lt.num_classes}, {"seed", c.init_seed()}};
  j["scorer"] = {{"kind", scorer_name(c.scorer.kind)}, {"reg", c.scorer.reg}};
  j["loss"] = {{"lambda_ood", c.loss.lambda_ood},
               {"lambda_gamma", c.loss.lambda_gamma},
               {"tau", c.loss.tau},
               {"clip_delta", c.loss.clip_delta},
               {"stop_delta_g", c.loss.stop_delta_g}};
  j["gamma_mode"] = gamma_mode_name(c.gamma_mode);
  j["optimizer"] = {{"kind", "adam"},
                    {"lr", c.optimizer.lr},
                    {"epochs", c.optimizer.epochs},
                    {"batch_size", c.optimizer.batch_size},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"schedule", "cosine"}};
  j["seed"] = c.seed;
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

}  // namespace imood
