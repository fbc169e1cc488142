#include "vtrain/config.hpp"

#include <fstream>
#include <sstream>

#include "vtrain/error.hpp"

namespace vtrain {

using nlohmann::json;

namespace {

const json& require(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) throw FormatError(std::string("config is missing '") + key + "'");
  return *it;
}

template <typename T>
T get_or(const json& doc, const char* key, T fallback) {
  const auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("config key '") + key + "' has the wrong type");
  }
}

template <typename T>
T get(const json& doc, const char* key) {
  try {
    return require(doc, key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("config key '") + key + "' has the wrong type");
  }
}

LayerSpec layer_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("model layers must be objects");
  const auto kind = layer_kind_from_string(get<std::string>(j, "kind"));
  LayerSpec layer{kind, 0, 0};
  if (kind == LayerKind::Dense) {
    layer.in = get<std::size_t>(j, "in");
    layer.out = get<std::size_t>(j, "out");
  }
  return layer;
}

}  // namespace

TrainConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("config must be a JSON object");
  TrainConfig cfg;

  const json& data = require(doc, "dataset");
  cfg.dataset.size = get<std::size_t>(data, "size");
  cfg.dataset.dim = get<std::size_t>(data, "dim");
  cfg.dataset.classes = get<std::size_t>(data, "classes");
  cfg.dataset.seed = get<std::uint64_t>(data, "seed");

  const json& model = require(doc, "model");
  if (!model.is_array()) throw FormatError("'model' must be an array of layers");
  cfg.model.layers.clear();
  for (const auto& layer : model) cfg.model.layers.push_back(layer_from_json(layer));

  cfg.epochs = get<std::size_t>(doc, "epochs");
  cfg.batch_size = get<std::size_t>(doc, "batch_size");
  cfg.learning_rate = get<double>(doc, "learning_rate");
  cfg.checkpoint_interval = get<std::size_t>(doc, "checkpoint_interval");
  cfg.seed = get<std::uint64_t>(doc, "seed");
  cfg.b_tr = get_or<int>(doc, "b_tr", 64);
  cfg.b_m = get_or<int>(doc, "b_m", 32);
  cfg.b_r = get<int>(doc, "b_r");

  const json& tau = require(doc, "tau");
  const auto policy = get<std::string>(tau, "policy");
  if (policy == "fixed") {
    cfg.tau = TauPolicy::fixed_tau(get<double>(tau, "value"));
  } else if (policy == "adaptive") {
    cfg.tau = TauPolicy::adaptive(get<std::map<std::string, double>>(tau, "table"));
  } else {
    throw FormatError("tau policy must be 'fixed' or 'adaptive', got '" + policy + "'");
  }

  cfg.trainer_profile = DeviceProfile::parse(get_or<std::string>(doc, "trainer_profile", "sequential"));
  cfg.compress_log = get_or<bool>(doc, "log_compression", false);
  cfg.validate();
  return cfg;
}

json config_to_json(const TrainConfig& cfg) {
  json layers = json::array();
  for (const auto& layer : cfg.model.layers) {
    json j = {{"kind", std::string(to_string(layer.kind))}};
    if (layer.kind == LayerKind::Dense) {
      j["in"] = layer.in;
      j["out"] = layer.out;
    }
    layers.push_back(std::move(j));
  }
  json tau;
  if (cfg.tau.kind == TauPolicy::Kind::Fixed) {
    tau = {{"policy", "fixed"}, {"value", cfg.tau.fixed}};
  } else {
    tau = {{"policy", "adaptive"}, {"table", cfg.tau.table}};
  }
  return {
      {"dataset",
       {{"size", cfg.dataset.size}, {"dim", cfg.dataset.dim}, {"classes", cfg.dataset.classes},
        {"seed", cfg.dataset.seed}}},
      {"model", layers},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"checkpoint_interval", cfg.checkpoint_interval},
      {"seed", cfg.seed},
      {"b_tr", cfg.b_tr},
      {"b_m", cfg.b_m},
      {"b_r", cfg.b_r},
      {"tau", tau},
      {"trainer_profile", cfg.trainer_profile.name},
      {"log_compression", cfg.compress_log},
  };
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << config_to_json(cfg).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace vtrain
