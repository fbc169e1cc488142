#pragma once

// Trainer, auditor and threshold search.
//
// Every intermediate output (each forward layer output, the loss gradient,
// each backward grad-input) is rounded onto the b_r grid. The trainer logs one
// Direction per element in canonical order:
//   step -> forward layers in order -> loss gradient -> backward layers in
//   reverse order -> elements row-major.
// The auditor consumes the same sequence and applies rev().

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtrain/digest.hpp"
#include "vtrain/fpround.hpp"
#include "vtrain/merkle.hpp"
#include "vtrain/roundlog.hpp"
#include "vtrain/simnet.hpp"

namespace vtrain {

enum class Pass { Forward, Backward };

/// Key used in adaptive threshold tables, e.g. "dense.forward".
std::string tau_key(LayerKind kind, Pass pass);

struct TauPolicy {
  enum class Kind { Fixed, Adaptive };
  Kind kind = Kind::Fixed;
  double fixed = kTauFloor;
  std::map<std::string, double> table;  ///< Adaptive: tau_key -> tau

  static TauPolicy fixed_tau(double tau) { return {Kind::Fixed, tau, {}}; }
  static TauPolicy adaptive(std::map<std::string, double> table) { return {Kind::Adaptive, kTauFloor, std::move(table)}; }

  double lookup(LayerKind kind, Pass pass) const;
};

struct DatasetSpec {
  std::size_t size = 512;
  std::size_t dim = 16;
  std::size_t classes = 3;
  std::uint64_t seed = 1;
};

struct TrainConfig {
  DatasetSpec dataset;
  ModelSpec model = ModelSpec::mlp(16, 32, 3);
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  std::size_t checkpoint_interval = 4;
  std::uint64_t seed = 42;  ///< shared randomness R
  int b_tr = 64;
  int b_m = 32;
  int b_r = 32;
  TauPolicy tau;
  DeviceProfile trainer_profile = DeviceProfile::sequential();
  bool compress_log = false;

  /// floor(|D| * E / B)
  std::size_t steps() const;
  std::size_t checkpoint_count() const { return steps() / checkpoint_interval; }
  /// Throws DomainError describing the first violated constraint.
  void validate() const;

  /// Shipped desk-scale configurations.
  static TrainConfig shipped_mlp();
  static TrainConfig shipped_logistic();
};

/// Per-step counters.
struct StepStats {
  double loss = 0.0;
  std::uint64_t forward_entries = 0;
  std::uint64_t backward_entries = 0;
  std::uint64_t corrections_forward = 0;
  std::uint64_t corrections_backward = 0;
  /// Trainer only: elements logged as Up/Down (correction opportunities).
  std::uint64_t logged_forward = 0;
  std::uint64_t logged_backward = 0;
};

/// Hooks for instrumentation and fault injection.
struct RunHooks {
  /// Called after the weight update of every step (0-based), before the
  /// checkpoint hash. May modify the weights.
  std::function<void(std::size_t step, ModelWeights& weights)> after_update;
  /// Keep a copy of the weights at every checkpoint.
  bool keep_checkpoints = false;
};

struct RunResult {
  Digest root{};
  std::vector<Digest> leaves;
  ModelWeights final_weights;
  Digest final_digest{};
  std::vector<StepStats> steps;
  std::vector<ModelWeights> checkpoints;  ///< filled when RunHooks::keep_checkpoints
  std::uint64_t entries = 0;               ///< directions produced or consumed
  std::chrono::duration<double> wall_time{};

  MerkleTree tree() const { return MerkleTree::build(leaves); }
  std::uint64_t corrections_forward() const;
  std::uint64_t corrections_backward() const;
  std::uint64_t corrections() const { return corrections_forward() + corrections_backward(); }
};

using TrainOutput = RunResult;
using AuditOutput = RunResult;

/// Trains on cfg.trainer_profile, writing one Direction per rounded element.
TrainOutput train(const TrainConfig& cfg, DirectionSink& log, const RunHooks& hooks = {});

/// Replays training on `auditor_profile`, following the logged directions.
/// Throws ProtocolError("operation-count mismatch") if the log is too short
/// or has entries left over.
AuditOutput audit(const TrainConfig& cfg, const DeviceProfile& auditor_profile, DirectionSource& log,
                  const RunHooks& hooks = {});

/// Replays training with plain nearest rounding (negative control).
AuditOutput audit_without_corrections(const TrainConfig& cfg, const DeviceProfile& auditor_profile,
                                      const RunHooks& hooks = {});

/// Euclidean distance over all parameters; throws DomainError on shape mismatch.
double weight_l2_distance(const ModelWeights& a, const ModelWeights& b);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Full-dataset loss and accuracy of `weights` (forward pass rounded to
/// cfg.b_r, sequential reductions).
Evaluation evaluate(const TrainConfig& cfg, const ModelWeights& weights);

/// Regenerates the dataset described by cfg.dataset.
Dataset make_config_dataset(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Adaptive thresholds

struct ThresholdSearch {
  double tau = 0.0;
  /// Normalized straddle distances |y - rnd(y)| / exponent_scale(y).
  std::vector<double> samples;
  std::size_t straddles = 0;
};

/// Binary search over [kTauFloor, tau_ceiling(b_r)] for `iterations` steps,
/// accepting tau when no sample lies below it. Returns the largest accepted
/// tau, or the ceiling when `samples` is empty.
double search_threshold(const std::vector<double>& samples, int b_r, std::size_t iterations);

/// Runs the layer (input shape rows x width) on random inputs under both
/// profiles and collects straddle distances, then calls search_threshold.
/// For Dense the layer's own dims define the width.
ThresholdSearch threshold_search(const LayerSpec& layer, Pass pass, int b_r, const DeviceProfile& first,
                                 const DeviceProfile& second, std::size_t samples, std::size_t iterations, Rng& rng,
                                 std::size_t rows = 1, std::size_t width = 0);

/// Adaptive tau table for every (layer kind, pass) in the model: the minimum
/// over all layers of that kind.
std::map<std::string, double> compute_tau_table(const TrainConfig& cfg, const DeviceProfile& first,
                                                const DeviceProfile& second, std::size_t samples,
                                                std::size_t iterations, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Storage estimate

struct StorageEstimate {
  std::uint64_t steps = 0;
  std::uint64_t forward_entries_per_step = 0;
  std::uint64_t backward_entries_per_step = 0;
  std::uint64_t entries = 0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t file_bytes = 0;  ///< header + payload for an uncompressed log
};

StorageEstimate estimate_log_entries(const TrainConfig& cfg);

}  // namespace vtrain
