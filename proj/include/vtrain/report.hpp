#pragma once

// JSON run report written by the train and audit commands.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vtrain/protocol.hpp"

namespace vtrain {

struct ReportExtras {
  std::optional<std::uint64_t> log_bytes;     ///< measured size of the rounding log
  std::optional<Digest> expected_root;        ///< audit only
  std::vector<double> l2_distance;            ///< per checkpoint, when a reference run exists
};

/// `role` is "train", "audit" or "audit_naive".
nlohmann::json make_report(std::string_view role, const TrainConfig& cfg, const DeviceProfile& profile,
                           const RunResult& run, const ReportExtras& extras = {});

void write_json(const nlohmann::json& doc, const std::filesystem::path& path);

}  // namespace vtrain
