#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "imood/error.hpp"
#include "imood/pipeline.hpp"

namespace imood {

namespace {

using json = nlohmann::json;
constexpr const char* kFormat = "imood-ckpt-v1";

nlohmann::ordered_json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  return Matrix(rows, cols, j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const TrainedModel& model) {
  model.params.validate();
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["input_dim"] = model.params.input_dim();
  j["hidden"] = model.params.hidden();
  j["num_classes"] = model.params.num_classes();
  j["activation"] = "relu";
  j["scorer"] = scorer_name(model.scorer);
  j["gamma_mode"] = gamma_mode_name(model.gamma_mode);
  j["class_prior"] = model.prior.pi;
  nlohmann::ordered_json tensors;
  for (ParamId id : all_params()) tensors[param_name(id)] = matrix_json(model.params[id]);
  j["tensors"] = std::move(tensors);
  if (model.stats)
    j["class_stats"] = {{"reg", model.stats->reg}, {"means", matrix_json(model.stats->means)},
                        {"cov", matrix_json(model.stats->cov)}};
  return j.dump(1) + "\n";
}

TrainedModel checkpoint_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != kFormat) throw ParseError("checkpoint: expected format \"imood-ckpt-v1\"");
    TrainedModel m;
    m.scorer = scorer_from_name(j.at("scorer").get<std::string>());
    m.gamma_mode = gamma_mode_from_name(j.at("gamma_mode").get<std::string>());
    if (j.contains("class_prior")) m.prior.pi = j.at("class_prior").get<std::vector<double>>();
    const json& t = j.at("tensors");
    for (ParamId id : all_params()) m.params[id] = matrix_from(t.at(param_name(id)));
    m.params.validate();
    if (m.params.input_dim() != j.at("input_dim").get<std::size_t>() ||
        m.params.hidden() != j.at("hidden").get<std::size_t>() ||
        m.params.num_classes() != j.at("num_classes").get<std::size_t>())
      throw ParseError("checkpoint: shape metadata disagrees with tensors");
    if (j.contains("class_stats")) {
      const json& s = j.at("class_stats");
      m.stats = make_class_stats(matrix_from(s.at("means")), matrix_from(s.at("cov")), s.at("reg").get<double>());
    }
    if (m.scorer == ScorerVariant::mahalanobis && !m.stats)
      throw ParseError("checkpoint: mahalanobis scorer without class_stats");
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << checkpoint_to_json(model);
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace imood
