#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "vtrain/config.hpp"
#include "vtrain/error.hpp"

using namespace vtrain;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = VTRAIN_CONFIG_DIR;

void same(const TrainConfig& a, const TrainConfig& b) {
  CHECK(config_to_json(a) == config_to_json(b));
  CHECK(a.model.layers == b.model.layers);
  CHECK(a.trainer_profile == b.trainer_profile);
  CHECK(a.tau.fixed == b.tau.fixed);
  CHECK(a.tau.table == b.tau.table);
  CHECK(a.learning_rate == b.learning_rate);
}

}  // namespace

TEST_CASE("shipped config files match the built-in configs") {
  same(load_config(kConfigDir / "mlp.json"), TrainConfig::shipped_mlp());
  same(load_config(kConfigDir / "logreg.json"), TrainConfig::shipped_logistic());
  const auto stress = load_config(kConfigDir / "mlp_stress.json");
  CHECK(stress.steps() == 64);
  CHECK(stress.model.widths(16) == std::vector<std::size_t>{16, 64, 64, 3, 3});
}

TEST_CASE("round trip") {
  TrainConfig cfg = TrainConfig::shipped_mlp();
  cfg.b_r = 27;
  cfg.compress_log = true;
  cfg.trainer_profile = DeviceProfile::chunked(5);
  cfg.learning_rate = 0.1;
  cfg.tau = TauPolicy::adaptive({{"dense.forward", 3.1e-8},
                                 {"dense.backward", 3.3e-8},
                                 {"relu.forward", 3.5e-8},
                                 {"relu.backward", 3.5e-8},
                                 {"softmax_xent.backward", 3.0e-8}});
  same(config_from_json(config_to_json(cfg)), cfg);
  same(config_from_json(json::parse(config_to_json(cfg).dump())), cfg);

  const auto dir = fs::temp_directory_path() / ("vtrain_config_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  save_config(cfg, dir / "c.json");
  same(load_config(dir / "c.json"), cfg);
  fs::remove_all(dir);
}

TEST_CASE("defaults for optional keys") {
  json doc = config_to_json(TrainConfig::shipped_mlp());
  doc.erase("b_tr");
  doc.erase("b_m");
  doc.erase("trainer_profile");
  doc.erase("log_compression");
  const auto cfg = config_from_json(doc);
  CHECK(cfg.b_tr == 64);
  CHECK(cfg.b_m == 32);
  CHECK(cfg.trainer_profile == DeviceProfile::sequential());
  CHECK_FALSE(cfg.compress_log);
}

TEST_CASE("format errors") {
  const json base = config_to_json(TrainConfig::shipped_mlp());
  auto broken = [&](auto mutate) {
    json doc = base;
    mutate(doc);
    return doc;
  };
  CHECK_THROWS_WITH_AS(config_from_json(broken([](json& d) { d.erase("seed"); })),
                       doctest::Contains("missing 'seed'"), FormatError);
  CHECK_THROWS_WITH_AS(config_from_json(broken([](json& d) { d["epochs"] = "four"; })),
                       doctest::Contains("'epochs' has the wrong type"), FormatError);
  CHECK_THROWS_AS(config_from_json(broken([](json& d) { d["model"] = 3; })), FormatError);
  CHECK_THROWS_AS(config_from_json(broken([](json& d) { d["model"][0] = "dense"; })), FormatError);
  CHECK_THROWS_AS(config_from_json(broken([](json& d) { d["tau"]["policy"] = "auto"; })), FormatError);
  CHECK_THROWS_AS(config_from_json(broken([](json& d) { d["tau"].erase("value"); })), FormatError);
  CHECK_THROWS_AS(config_from_json(json::array()), FormatError);
}

TEST_CASE("semantic errors") {
  const json base = config_to_json(TrainConfig::shipped_mlp());
  json doc = base;
  doc["b_r"] = 20;
  CHECK_THROWS_AS(config_from_json(doc), DomainError);
  doc = base;
  doc["model"][0]["kind"] = "conv";
  CHECK_THROWS_AS(config_from_json(doc), DomainError);
  doc = base;
  doc["trainer_profile"] = "tpu";
  CHECK_THROWS_AS(config_from_json(doc), DomainError);
  doc = base;
  doc["tau"] = {{"policy", "adaptive"}, {"table", {{"dense.forward", 3e-8}}}};
  CHECK_THROWS_WITH_AS(config_from_json(doc), doctest::Contains("no entry for 'dense.backward'"), DomainError);
}

TEST_CASE("file errors") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
  const auto dir = fs::temp_directory_path() / ("vtrain_config_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), FormatError);
  CHECK_THROWS_AS(save_config(TrainConfig::shipped_mlp(), dir / "missing" / "c.json"), IoError);
  fs::remove_all(dir);
}
