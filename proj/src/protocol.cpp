#include "vtrain/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vtrain/error.hpp"

namespace vtrain {

std::string tau_key(LayerKind kind, Pass pass) {
  return std::string(to_string(kind)) + (pass == Pass::Forward ? ".forward" : ".backward");
}

double TauPolicy::lookup(LayerKind layer, Pass pass) const {
  if (kind == Kind::Fixed) return fixed;
  const auto it = table.find(tau_key(layer, pass));
  if (it == table.end()) throw DomainError("adaptive tau table has no entry for '" + tau_key(layer, pass) + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Config

std::size_t TrainConfig::steps() const {
  if (batch_size == 0) return 0;
  return dataset.size * epochs / batch_size;
}

namespace {

std::vector<std::pair<LayerKind, Pass>> logged_operations(const ModelSpec& model) {
  std::vector<std::pair<LayerKind, Pass>> ops;
  for (const auto& layer : model.layers) {
    if (!layer.is_loss()) ops.emplace_back(layer.kind, Pass::Forward);
    ops.emplace_back(layer.kind, Pass::Backward);
  }
  return ops;
}

void check_tau(double tau, int b_r, const std::string& what) {
  if (!(tau >= kTauFloor && tau <= tau_ceiling(b_r))) {
    throw DomainError(what + " must lie in [0.25*2^-23, 0.5*2^(9-b_r)], got " + std::to_string(tau));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (b_tr != 64) throw DomainError("training precision b_tr must be 64");
  if (b_m != 32) throw DomainError("model precision b_m must be 32");
  if (b_r < 26 || b_r > 32) throw DomainError("rounding amount b_r must be in [26, 32]");
  if (dataset.size == 0 || dataset.dim == 0 || dataset.classes == 0) {
    throw DomainError("dataset size, dim and classes must be >= 1");
  }
  if (epochs == 0) throw DomainError("epochs must be >= 1");
  if (batch_size == 0 || batch_size > dataset.size) throw DomainError("batch size must be in [1, dataset size]");
  if (checkpoint_interval == 0) throw DomainError("checkpoint interval k must be >= 1");
  if (steps() == 0) throw DomainError("configuration yields zero training steps");
  if (checkpoint_count() == 0) throw DomainError("checkpoint interval exceeds the number of steps");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw DomainError("learning rate must be finite and >= 0");
  if (trainer_profile.order == ReductionOrder::Chunked && trainer_profile.chunk_size == 0) {
    throw DomainError("chunk size must be >= 1");
  }

  model.validate(dataset.dim);
  const std::size_t logits = model.widths(dataset.dim).back();
  if (model.loss().kind == LayerKind::SoftmaxCrossEntropy && logits != dataset.classes) {
    throw DomainError("softmax width " + std::to_string(logits) + " does not match " +
                      std::to_string(dataset.classes) + " classes");
  }
  if (model.loss().kind == LayerKind::SigmoidCrossEntropy && dataset.classes != 2) {
    throw DomainError("sigmoid cross-entropy needs a two-class dataset");
  }

  if (tau.kind == TauPolicy::Kind::Fixed) {
    check_tau(tau.fixed, b_r, "tau");
  } else {
    for (const auto& [kind, pass] : logged_operations(model)) {
      check_tau(tau.lookup(kind, pass), b_r, "tau for '" + tau_key(kind, pass) + "'");
    }
  }
}

TrainConfig TrainConfig::shipped_mlp() {
  TrainConfig cfg;
  cfg.dataset = {512, 16, 3, 7};
  cfg.model = ModelSpec::mlp(16, 32, 3);
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.5;
  cfg.checkpoint_interval = 4;
  cfg.seed = 42;
  cfg.b_r = 32;
  return cfg;
}

TrainConfig TrainConfig::shipped_logistic() {
  TrainConfig cfg;
  cfg.dataset = {4096, 64, 2, 11};
  cfg.model = ModelSpec::logistic_regression(64);
  cfg.epochs = 1;
  cfg.batch_size = 64;
  cfg.learning_rate = 0.5;
  cfg.checkpoint_interval = 4;
  cfg.seed = 2024;
  cfg.b_r = 32;
  return cfg;
}

std::uint64_t RunResult::corrections_forward() const {
  std::uint64_t n = 0;
  for (const auto& s : steps) n += s.corrections_forward;
  return n;
}

std::uint64_t RunResult::corrections_backward() const {
  std::uint64_t n = 0;
  for (const auto& s : steps) n += s.corrections_backward;
  return n;
}

Dataset make_config_dataset(const TrainConfig& cfg) {
  Rng rng(cfg.dataset.seed);
  return make_dataset(cfg.dataset.size, cfg.dataset.dim, cfg.dataset.classes, rng);
}

// ---------------------------------------------------------------------------
// Training engine shared by trainer and auditor

namespace {

enum class Role { Trainer, Auditor, Naive };

void round_in_place(Tensor& t, int b_r) {
  for (double& v : t.data) v = rnd(v, b_r);
}

LossResult loss_forward(const LayerSpec& loss, const Tensor& logits, std::span<const int> labels,
                        const DeviceProfile& profile) {
  return loss.kind == LayerKind::SoftmaxCrossEntropy ? softmax_xent_forward(logits, labels, profile)
                                                     : sigmoid_xent_forward(logits, labels, profile);
}

class Session {
 public:
  Session(const TrainConfig& cfg, const DeviceProfile& profile, Role role, DirectionSink* sink,
          DirectionSource* source)
      : cfg_(cfg), profile_(profile), role_(role), sink_(sink), source_(source) {}

  RunResult run(const RunHooks& hooks) {
    cfg_.validate();
    const auto start = std::chrono::steady_clock::now();
    const Dataset data = make_config_dataset(cfg_);
    const auto& layers = cfg_.model.layers;

    Rng rng(cfg_.seed);
    ModelWeights weights = init_weights(cfg_.model, rng);
    for (auto& t : weights.tensors) round_in_place(t, cfg_.b_r);

    // Parameter tensor offset for each Dense layer.
    std::vector<std::size_t> param_index(layers.size(), 0);
    for (std::size_t l = 0, next = 0; l < layers.size(); ++l) {
      if (layers[l].kind == LayerKind::Dense) {
        param_index[l] = next;
        next += 2;
      }
    }

    BatchSchedule schedule(data.size(), cfg_.batch_size);
    RunResult result;
    const std::size_t total_steps = cfg_.steps();
    result.steps.reserve(total_steps);

    for (std::size_t step = 0; step < total_steps; ++step) {
      StepStats stats;
      try {
        const auto rows = schedule.next(rng);
        const std::vector<int> labels = gather_labels(data.labels, rows);

        // Forward: acts[l] is the input of layer l.
        std::vector<Tensor> acts;
        acts.reserve(layers.size());
        acts.push_back(gather_rows(data.features, rows));
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
          const auto& layer = layers[l];
          Tensor out;
          switch (layer.kind) {
            case LayerKind::Dense:
              out = dense_forward(acts[l], weights.tensors[param_index[l]], weights.tensors[param_index[l] + 1],
                                  profile_);
              break;
            case LayerKind::ReLU:
              out = relu_forward(acts[l]);
              break;
            case LayerKind::Sigmoid:
              out = sigmoid_forward(acts[l]);
              break;
            default:
              throw DomainError("unexpected loss layer inside the model");
          }
          settle(out, layer.kind, Pass::Forward, stats);
          acts.push_back(std::move(out));
        }

        const auto& loss_layer = layers.back();
        LossResult loss = loss_forward(loss_layer, acts.back(), labels, profile_);
        if (!std::isfinite(loss.loss)) throw DomainError("non-finite loss");
        stats.loss = rnd(loss.loss, cfg_.b_r);
        Tensor grad = std::move(loss.grad_logits);
        settle(grad, loss_layer.kind, Pass::Backward, stats);

        std::vector<Tensor> param_grads(weights.tensors.size());
        for (std::size_t l = layers.size() - 1; l-- > 0;) {
          const auto& layer = layers[l];
          switch (layer.kind) {
            case LayerKind::Dense: {
              DenseGrads g = dense_backward(grad, acts[l], weights.tensors[param_index[l]], profile_);
              param_grads[param_index[l]] = std::move(g.grad_weight);
              param_grads[param_index[l] + 1] = std::move(g.grad_bias);
              grad = std::move(g.grad_x);
              break;
            }
            case LayerKind::ReLU:
              grad = relu_backward(grad, acts[l]);
              break;
            case LayerKind::Sigmoid:
              grad = sigmoid_backward(grad, acts[l + 1]);
              break;
            default:
              throw DomainError("unexpected loss layer inside the model");
          }
          settle(grad, layer.kind, Pass::Backward, stats);
        }

        for (std::size_t t = 0; t < weights.tensors.size(); ++t) {
          auto& w = weights.tensors[t].data;
          const auto& g = param_grads[t].data;
          for (std::size_t i = 0; i < w.size(); ++i) w[i] = rnd(w[i] - cfg_.learning_rate * g[i], cfg_.b_r);
        }
      } catch (const DomainError& e) {
        throw DomainError("step " + std::to_string(step) + ": " + e.what());
      }

      if (hooks.after_update) hooks.after_update(step, weights);
      if ((step + 1) % cfg_.checkpoint_interval == 0) {
        result.leaves.push_back(hash_weights(weights, cfg_.b_m));
        if (hooks.keep_checkpoints) result.checkpoints.push_back(weights);
      }
      result.entries += stats.forward_entries + stats.backward_entries;
      result.steps.push_back(stats);
      step_ = step + 1;
    }

    if (role_ == Role::Auditor && source_->remaining() != 0) {
      throw ProtocolError("operation-count mismatch: " + std::to_string(source_->remaining()) +
                          " log entries left after replay");
    }

    result.root = MerkleTree::build(result.leaves).root();
    result.final_digest = hash_weights(weights, cfg_.b_m);
    result.final_weights = std::move(weights);
    result.wall_time = std::chrono::steady_clock::now() - start;
    return result;
  }

 private:
  void settle(Tensor& values, LayerKind kind, Pass pass, StepStats& stats) {
    const double tau = cfg_.tau.lookup(kind, pass);
    const int b_r = cfg_.b_r;
    const bool forward = pass == Pass::Forward;
    (forward ? stats.forward_entries : stats.backward_entries) += values.size();

    switch (role_) {
      case Role::Trainer: {
        const RoundingParams params{b_r, tau};
        std::uint64_t logged = 0;
        for (double& v : values.data) {
          const Direction d = direction(v, params);
          sink_->write(d);
          if (d != Direction::Ignore) ++logged;
          v = rnd(v, b_r);
        }
        (forward ? stats.logged_forward : stats.logged_backward) += logged;
        break;
      }
      case Role::Auditor: {
        std::uint64_t corrected = 0;
        for (double& v : values.data) {
          Direction c;
          try {
            c = source_->read();
          } catch (const ProtocolError&) {
            throw ProtocolError("operation-count mismatch: log exhausted during step " + std::to_string(step_));
          }
          const double nearest = rnd(v, b_r);
          const double followed = rev(v, b_r, c);
          if (followed != nearest) ++corrected;
          v = followed;
        }
        (forward ? stats.corrections_forward : stats.corrections_backward) += corrected;
        break;
      }
      case Role::Naive:
        round_in_place(values, b_r);
        break;
    }
  }

  const TrainConfig& cfg_;
  DeviceProfile profile_;
  Role role_;
  DirectionSink* sink_;
  DirectionSource* source_;
  std::size_t step_ = 0;
};

}  // namespace

TrainOutput train(const TrainConfig& cfg, DirectionSink& log, const RunHooks& hooks) {
  return Session(cfg, cfg.trainer_profile, Role::Trainer, &log, nullptr).run(hooks);
}

AuditOutput audit(const TrainConfig& cfg, const DeviceProfile& auditor_profile, DirectionSource& log,
                  const RunHooks& hooks) {
  return Session(cfg, auditor_profile, Role::Auditor, nullptr, &log).run(hooks);
}

AuditOutput audit_without_corrections(const TrainConfig& cfg, const DeviceProfile& auditor_profile,
                                      const RunHooks& hooks) {
  return Session(cfg, auditor_profile, Role::Naive, nullptr, nullptr).run(hooks);
}

double weight_l2_distance(const ModelWeights& a, const ModelWeights& b) {
  if (a.tensors.size() != b.tensors.size()) throw DomainError("weight tensor count mismatch");
  std::vector<double> squares;
  squares.reserve(a.parameter_count());
  for (std::size_t t = 0; t < a.tensors.size(); ++t) {
    const auto& x = a.tensors[t];
    const auto& y = b.tensors[t];
    if (x.rows != y.rows || x.cols != y.cols) throw DomainError("weight tensor shape mismatch at " + std::to_string(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x.data[i] - y.data[i];
      squares.push_back(d * d);
    }
  }
  return std::sqrt(reduce(squares, DeviceProfile::sequential()));
}

Evaluation evaluate(const TrainConfig& cfg, const ModelWeights& weights) {
  const Dataset data = make_config_dataset(cfg);
  const auto profile = DeviceProfile::sequential();
  const auto& layers = cfg.model.layers;
  Tensor act = data.features;
  std::size_t next = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    switch (layers[l].kind) {
      case LayerKind::Dense:
        act = dense_forward(act, weights.tensors[next], weights.tensors[next + 1], profile);
        next += 2;
        break;
      case LayerKind::ReLU:
        act = relu_forward(act);
        break;
      case LayerKind::Sigmoid:
        act = sigmoid_forward(act);
        break;
      default:
        break;
    }
    round_in_place(act, cfg.b_r);
  }
  const LossResult loss = loss_forward(layers.back(), act, data.labels, profile);

  std::size_t correct = 0;
  for (std::size_t b = 0; b < act.rows; ++b) {
    int predicted;
    if (act.cols == 1) {
      predicted = act.at(b, 0) > 0.0 ? 1 : 0;
    } else {
      const auto row = act.row(b);
      predicted = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    if (predicted == data.labels[b]) ++correct;
  }
  return {loss.loss, static_cast<double>(correct) / static_cast<double>(act.rows)};
}

// ---------------------------------------------------------------------------
// Thresholds

double search_threshold(const std::vector<double>& samples, int b_r, std::size_t iterations) {
  double upper = tau_ceiling(b_r);
  if (samples.empty()) return upper;
  double lower = kTauFloor;
  double accepted = kTauFloor;
  for (std::size_t t = 0; t < iterations; ++t) {
    const double tau = (lower + upper) / 2;
    const bool success = std::none_of(samples.begin(), samples.end(), [tau](double p) { return p < tau; });
    if (success) {
      lower = tau;
      accepted = tau;
    } else {
      upper = tau;
    }
  }
  return accepted;
}

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Applies the operation under one profile; `inputs` carries whatever the
// operation needs (input, weights, upstream gradient, labels).
struct ProbeInputs {
  Tensor x;
  Tensor weight;
  Tensor bias;
  Tensor grad_out;
  std::vector<int> labels;
};

Tensor probe(const LayerSpec& layer, Pass pass, const ProbeInputs& in, const DeviceProfile& profile) {
  switch (layer.kind) {
    case LayerKind::Dense:
      return pass == Pass::Forward ? dense_forward(in.x, in.weight, in.bias, profile)
                                   : dense_backward(in.grad_out, in.x, in.weight, profile).grad_x;
    case LayerKind::ReLU:
      return pass == Pass::Forward ? relu_forward(in.x) : relu_backward(in.grad_out, in.x);
    case LayerKind::Sigmoid:
      return pass == Pass::Forward ? sigmoid_forward(in.x) : sigmoid_backward(in.grad_out, sigmoid_forward(in.x));
    case LayerKind::SoftmaxCrossEntropy:
      return softmax_xent_forward(in.x, in.labels, profile).grad_logits;
    case LayerKind::SigmoidCrossEntropy:
      return sigmoid_xent_forward(in.x, in.labels, profile).grad_logits;
  }
  return {};
}

}  // namespace

ThresholdSearch threshold_search(const LayerSpec& layer, Pass pass, int b_r, const DeviceProfile& first,
                                 const DeviceProfile& second, std::size_t samples, std::size_t iterations, Rng& rng,
                                 std::size_t rows, std::size_t width) {
  check_rounding_bits(b_r);
  if (samples == 0 || iterations == 0) throw DomainError("threshold search needs N >= 1 and T >= 1");
  if (rows == 0) throw DomainError("threshold search needs at least one input row");

  ThresholdSearch out;
  // The loss value itself is never logged.
  if (layer.is_loss() && pass == Pass::Forward) {
    out.tau = search_threshold(out.samples, b_r, iterations);
    return out;
  }

  std::size_t in_width = width;
  std::size_t out_width = width;
  if (layer.kind == LayerKind::Dense) {
    in_width = layer.in;
    out_width = layer.out;
  } else if (layer.kind == LayerKind::SigmoidCrossEntropy) {
    in_width = out_width = 1;
  }
  if (in_width == 0 || out_width == 0) throw DomainError("threshold search needs a positive layer width");
  if (layer.kind == LayerKind::SoftmaxCrossEntropy && in_width < 2) {
    throw DomainError("softmax threshold search needs width >= 2");
  }

  ProbeInputs in;
  if (layer.kind == LayerKind::Dense) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_width));
    in.weight = random_tensor(out_width, in_width, rng, -bound, bound);
    in.bias = Tensor(1, out_width);
  }

  for (std::size_t n = 0; n < samples; ++n) {
    in.x = random_tensor(rows, in_width, rng);
    if (pass == Pass::Backward) in.grad_out = random_tensor(rows, out_width, rng);
    if (layer.is_loss()) {
      const std::size_t classes = layer.kind == LayerKind::SoftmaxCrossEntropy ? in_width : 2;
      in.labels.resize(rows);
      for (int& label : in.labels) label = static_cast<int>(rng.below(classes));
      // Confident logits make the loss gradient cancellation-prone, which is
      // where profile differences show up.
      for (double& v : in.x.data) v *= 16.0;
    }

    const Tensor y1 = probe(layer, pass, in, first);
    const Tensor y2 = probe(layer, pass, in, second);
    for (std::size_t i = 0; i < y1.size(); ++i) {
      const double a = y1.data[i];
      const double b = y2.data[i];
      const double ra = rnd(a, b_r);
      const double rb = rnd(b, b_r);
      if (ra == rb) continue;
      if ((a > ra && b < rb) || (a < ra && b > rb)) {
        ++out.straddles;
        out.samples.push_back(std::fabs(a - ra) / exponent_scale(a));
        out.samples.push_back(std::fabs(b - rb) / exponent_scale(b));
      }
    }
  }
  out.tau = search_threshold(out.samples, b_r, iterations);
  return out;
}

std::map<std::string, double> compute_tau_table(const TrainConfig& cfg, const DeviceProfile& first,
                                                const DeviceProfile& second, std::size_t samples,
                                                std::size_t iterations, std::uint64_t seed) {
  cfg.model.validate(cfg.dataset.dim);
  const auto widths = cfg.model.widths(cfg.dataset.dim);
  std::map<std::string, double> table;
  Rng rng(seed);
  for (std::size_t l = 0; l < cfg.model.layers.size(); ++l) {
    const auto& layer = cfg.model.layers[l];
    for (Pass pass : {Pass::Forward, Pass::Backward}) {
      if (layer.is_loss() && pass == Pass::Forward) continue;
      const auto found =
          threshold_search(layer, pass, cfg.b_r, first, second, samples, iterations, rng, cfg.batch_size, widths[l]);
      const auto key = tau_key(layer.kind, pass);
      const auto it = table.find(key);
      table[key] = it == table.end() ? found.tau : std::min(it->second, found.tau);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Storage

StorageEstimate estimate_log_entries(const TrainConfig& cfg) {
  cfg.validate();
  const auto widths = cfg.model.widths(cfg.dataset.dim);
  const std::uint64_t batch = cfg.batch_size;
  StorageEstimate e;
  e.steps = cfg.steps();
  for (std::size_t l = 0; l < cfg.model.layers.size(); ++l) {
    if (cfg.model.layers[l].is_loss()) {
      e.backward_entries_per_step += batch * widths[l];  // loss gradient w.r.t. logits
    } else {
      e.forward_entries_per_step += batch * widths[l + 1];
      e.backward_entries_per_step += batch * widths[l];
    }
  }
  e.entries = e.steps * (e.forward_entries_per_step + e.backward_entries_per_step);
  e.payload_bytes = packed_payload_bytes(e.entries);
  e.file_bytes = kLogHeaderSize + e.payload_bytes;
  return e;
}

}  // namespace vtrain
