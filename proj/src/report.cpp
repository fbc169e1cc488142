#include "vtrain/report.hpp"

#include <fstream>

#include "vtrain/error.hpp"

namespace vtrain {

using nlohmann::json;

json make_report(std::string_view role, const TrainConfig& cfg, const DeviceProfile& profile, const RunResult& run,
                 const ReportExtras& extras) {
  json per_step = json::array();
  json losses = json::array();
  std::uint64_t logged_forward = 0;
  std::uint64_t logged_backward = 0;
  for (const auto& s : run.steps) {
    per_step.push_back({s.corrections_forward, s.corrections_backward});
    losses.push_back(s.loss);
    logged_forward += s.logged_forward;
    logged_backward += s.logged_backward;
  }
  json leaves = json::array();
  for (const auto& leaf : run.leaves) leaves.push_back(to_hex(leaf));

  const StorageEstimate estimate = estimate_log_entries(cfg);
  json doc = {
      {"role", std::string(role)},
      {"profile", profile.name},
      {"b_r", cfg.b_r},
      {"steps", run.steps.size()},
      {"checkpoint_interval", cfg.checkpoint_interval},
      {"root", to_hex(run.root)},
      {"leaves", leaves},
      {"final_weights_sha256", to_hex(run.final_digest)},
      {"log",
       {{"entries", run.entries},
        {"estimated_entries", estimate.entries},
        {"estimated_bytes", estimate.file_bytes},
        {"compressed", cfg.compress_log}}},
      {"corrections",
       {{"forward", run.corrections_forward()},
        {"backward", run.corrections_backward()},
        {"total", run.corrections()},
        {"per_step", per_step}}},
      {"logged", {{"forward", logged_forward}, {"backward", logged_backward}}},
      {"loss", losses},
      {"timings", {{"wall_seconds", run.wall_time.count()}}},
  };
  if (extras.log_bytes) doc["log"]["bytes"] = *extras.log_bytes;
  if (extras.expected_root) {
    doc["expected_root"] = to_hex(*extras.expected_root);
    doc["root_matches"] = *extras.expected_root == run.root;
  }
  if (!extras.l2_distance.empty()) doc["l2_distance"] = extras.l2_distance;
  return doc;
}

void write_json(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace vtrain
