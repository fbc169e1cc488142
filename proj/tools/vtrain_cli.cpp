// vtrain: train, audit, dispute and inspect verifiable training runs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vtrain/config.hpp"
#include "vtrain/error.hpp"
#include "vtrain/game.hpp"
#include "vtrain/merkle.hpp"
#include "vtrain/protocol.hpp"
#include "vtrain/report.hpp"
#include "vtrain/roundlog.hpp"

namespace fs = std::filesystem;
using namespace vtrain;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kDispute = 1, kUsage = 2, kIo = 3, kProtocol = 4 };

std::chrono::milliseconds seconds(double s) {
  return std::chrono::milliseconds(static_cast<long long>(s * 1000.0));
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

DeviceProfile profile_or(const std::string& name, const DeviceProfile& fallback) {
  return name.empty() ? fallback : DeviceProfile::parse(name);
}

struct TrainArgs {
  std::string config, profile, out = "run";
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config);
  cfg.trainer_profile = profile_or(a.profile, cfg.trainer_profile);
  fs::create_directories(a.out);
  const fs::path dir = a.out;

  LogWriter log(dir / "run.vtrl", cfg.b_r, cfg.compress_log);
  const RunResult run = train(cfg, log);
  log.close();

  run.tree().save(dir / "tree.vtmt");
  write_bytes(dir / "weights.bin", serialize_weights(run.final_weights));
  ReportExtras extras;
  extras.log_bytes = fs::file_size(dir / "run.vtrl");
  write_json(make_report("train", cfg, cfg.trainer_profile, run, extras), dir / "report.json");
  std::cout << to_hex(run.root) << '\n';
  return kOk;
}

struct AuditArgs {
  std::string config, profile, log, expect_root, out;
  bool naive = false;
};

int cmd_audit(const AuditArgs& a) {
  const TrainConfig cfg = load_config(a.config);
  const DeviceProfile profile = profile_or(a.profile, DeviceProfile::sequential());
  const Digest expected = digest_from_hex(a.expect_root);

  RunResult run;
  ReportExtras extras;
  extras.expected_root = expected;
  if (a.naive) {
    run = audit_without_corrections(cfg, profile);
  } else {
    if (a.log.empty()) throw DomainError("--log is required unless --no-corrections is given");
    LogReader log(a.log);
    if (log.header().b_r != cfg.b_r) {
      throw ProtocolError("log was written with b_r " + std::to_string(log.header().b_r) + ", config says " +
                          std::to_string(cfg.b_r));
    }
    run = audit(cfg, profile, log);
    extras.log_bytes = fs::file_size(a.log);
  }

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    const fs::path dir = a.out;
    run.tree().save(dir / "tree.vtmt");
    write_bytes(dir / "weights.bin", serialize_weights(run.final_weights));
    write_json(make_report(a.naive ? "audit_naive" : "audit", cfg, profile, run, extras), dir / "report.json");
  }
  const bool match = run.root == expected;
  std::cout << to_hex(run.root) << ' ' << (match ? "match" : "MISMATCH") << " corrections=" << run.corrections()
            << '\n';
  return match ? kOk : kDispute;
}

int cmd_serve(const std::string& tree_path, const std::string& listen, bool once, double idle) {
  const MerkleTree tree = MerkleTree::load(tree_path);
  GameServer server(tree, listen);
  std::cout << "listening on port " << server.port() << std::endl;
  if (once) {
    server.serve_one(seconds(idle));
  } else {
    for (;;) server.serve_one(seconds(idle));
  }
  return kOk;
}

int cmd_dispute(const std::string& tree_path, const std::string& connect, double timeout, const std::string& report,
                const std::string& run_id) {
  const MerkleTree tree = MerkleTree::load(tree_path);
  auto channel = SocketChannel::connect(connect, seconds(timeout));
  const VerdictReport verdict = challenge(tree, *channel, seconds(timeout), run_id);
  const json doc = verdict.to_json();
  if (!report.empty()) write_json(doc, report);
  std::cout << doc.dump(2) << '\n';
  switch (verdict.outcome) {
    case Outcome::TrainingVerified:
      return kOk;
    case Outcome::DisputeAtLeaf:
      return kDispute;
    default:
      return kProtocol;
  }
}

struct ThresholdArgs {
  std::string layer = "dense", shape = "64x64", profiles = "sequential,pairwise", pass = "forward", config;
  int b_r = 32;
  std::size_t samples = 1000, iters = 30, rows = 1;
  std::uint64_t seed = 1;
};

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> dims;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, 'x')) {
    std::size_t used = 0;
    std::size_t v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty() || v == 0) throw DomainError("bad --shape '" + s + "'");
    dims.push_back(v);
  }
  if (dims.empty() || dims.size() > 2) throw DomainError("--shape takes IN x OUT or WIDTH, got '" + s + "'");
  return dims;
}

int cmd_threshold(const ThresholdArgs& a) {
  const auto comma = a.profiles.find(',');
  if (comma == std::string::npos) throw DomainError("--profiles takes two names separated by a comma");
  const auto first = DeviceProfile::parse(a.profiles.substr(0, comma));
  const auto second = DeviceProfile::parse(a.profiles.substr(comma + 1));
  if (a.samples == 0 || a.iters == 0) throw DomainError("--samples and --iters must be >= 1");

  if (!a.config.empty()) {
    TrainConfig cfg = load_config(a.config);
    cfg.b_r = a.b_r;
    const auto table = compute_tau_table(cfg, first, second, a.samples, a.iters, a.seed);
    std::cout << json{{"policy", "adaptive"}, {"table", table}}.dump(2) << '\n';
    return kOk;
  }

  const auto kind = layer_kind_from_string(a.layer);
  const auto dims = parse_dims(a.shape);
  LayerSpec layer{kind, 0, 0};
  std::size_t width = dims.back();
  if (kind == LayerKind::Dense) {
    if (dims.size() != 2) throw DomainError("dense layers need --shape INxOUT");
    layer = LayerSpec::dense(dims[0], dims[1]);
    width = dims[0];
  }
  Pass pass;
  if (a.pass == "forward") {
    pass = Pass::Forward;
  } else if (a.pass == "backward") {
    pass = Pass::Backward;
  } else {
    throw DomainError("--pass must be forward or backward");
  }
  if (a.b_r < 10 || a.b_r > 32) throw DomainError("--b_r must be in [10, 32]");
  Rng rng(a.seed);
  const auto found = threshold_search(layer, pass, a.b_r, first, second, a.samples, a.iters, rng, a.rows, width);
  std::cout << json{{"layer", tau_key(kind, pass)},
                    {"b_r", a.b_r},
                    {"tau", found.tau},
                    {"tau_units_2m23", found.tau * 8388608.0},
                    {"straddles", found.straddles},
                    {"samples", found.samples.size()}}
                   .dump(2)
            << '\n';
  return kOk;
}

int cmd_inspect_log(const std::string& path) {
  const auto s = inspect_log(path);
  std::cout << json{{"version", s.header.version},
                    {"b_r", s.header.b_r},
                    {"compressed", s.header.compressed()},
                    {"entries", s.header.entry_count},
                    {"histogram", {{"down", s.histogram[0]}, {"ignore", s.histogram[1]}, {"up", s.histogram[2]}}},
                    {"payload_bytes", s.payload_bytes},
                    {"file_bytes", s.file_bytes}}
                   .dump(2)
            << '\n';
  return kOk;
}

int cmd_estimate(const std::string& config) {
  const auto cfg = load_config(config);
  const auto e = estimate_log_entries(cfg);
  std::cout << json{{"steps", e.steps},
                    {"forward_entries_per_step", e.forward_entries_per_step},
                    {"backward_entries_per_step", e.backward_entries_per_step},
                    {"entries", e.entries},
                    {"payload_bytes", e.payload_bytes},
                    {"file_bytes", e.file_bytes}}
                   .dump(2)
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable training: train, audit and dispute runs"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train and write log, tree, weights and report");
  train_cmd->add_option("config", train_args.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--profile", train_args.profile, "Reduction profile (overrides the config)");
  train_cmd->add_option("--out", train_args.out, "Output directory");

  AuditArgs audit_args;
  auto* audit_cmd = app.add_subcommand("audit", "Replay a run and compare its Merkle root");
  audit_cmd->add_option("config", audit_args.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  audit_cmd->add_option("--profile", audit_args.profile, "Auditor reduction profile");
  audit_cmd->add_option("--log", audit_args.log, "Trainer's rounding log");
  audit_cmd->add_option("--expect-root", audit_args.expect_root, "Trainer's Merkle root (hex)")->required();
  audit_cmd->add_option("--out", audit_args.out, "Write tree, weights and report here");
  audit_cmd->add_flag("--no-corrections", audit_args.naive, "Plain rounding, ignoring the log");

  std::string serve_tree, listen = "127.0.0.1:7878";
  bool once = false;
  double idle = 30.0;
  auto* serve_cmd = app.add_subcommand("serve", "Answer verification-game requests for a tree");
  serve_cmd->add_option("tree", serve_tree, "Merkle tree sidecar")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--listen", listen, "host:port");
  serve_cmd->add_flag("--once", once, "Exit after one session");
  serve_cmd->add_option("--idle-timeout", idle, "Seconds to wait for each request");

  std::string dispute_tree, connect, dispute_report, run_id;
  double timeout = 30.0;
  auto* dispute_cmd = app.add_subcommand("dispute", "Challenge a trainer's tree with a local tree");
  dispute_cmd->add_option("tree", dispute_tree, "Auditor's Merkle tree sidecar")->required()->check(CLI::ExistingFile);
  dispute_cmd->add_option("--connect", connect, "Trainer host:port")->required();
  dispute_cmd->add_option("--timeout", timeout, "Seconds to wait for each reply");
  dispute_cmd->add_option("--report", dispute_report, "Also write the verdict JSON here");
  dispute_cmd->add_option("--run-id", run_id, "Run identifier sent in hello");

  ThresholdArgs th;
  auto* th_cmd = app.add_subcommand("threshold", "Search the rounding threshold for a layer");
  th_cmd->add_option("--layer", th.layer, "dense, relu, sigmoid, softmax_xent or sigmoid_xent");
  th_cmd->add_option("--shape", th.shape, "INxOUT for dense, WIDTH otherwise");
  th_cmd->add_option("--rows", th.rows, "Rows per sample");
  th_cmd->add_option("--pass", th.pass, "forward or backward");
  th_cmd->add_option("--b_r", th.b_r, "Rounding amount");
  th_cmd->add_option("--profiles", th.profiles, "Two profiles, e.g. sequential,pairwise");
  th_cmd->add_option("--samples", th.samples, "Random inputs");
  th_cmd->add_option("--iters", th.iters, "Binary-search iterations");
  th_cmd->add_option("--seed", th.seed, "Seed");
  th_cmd->add_option("--config", th.config, "Print an adaptive tau table for this config instead");

  std::string log_path;
  auto* inspect_cmd = app.add_subcommand("inspect-log", "Print a log header and direction histogram");
  inspect_cmd->add_option("log", log_path, "Rounding log")->required();

  std::string est_config;
  auto* est_cmd = app.add_subcommand("estimate", "Predict log entries and file size for a config");
  est_cmd->add_option("config", est_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*audit_cmd) return cmd_audit(audit_args);
    if (*serve_cmd) return cmd_serve(serve_tree, listen, once, idle);
    if (*dispute_cmd) return cmd_dispute(dispute_tree, connect, timeout, dispute_report, run_id);
    if (*th_cmd) return cmd_threshold(th);
    if (*inspect_cmd) return cmd_inspect_log(log_path);
    if (*est_cmd) return cmd_estimate(est_config);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kProtocol;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
