#pragma once

// Numerical kernel used by both trainer and auditor.
//
// Every summation goes through reduce(), whose accumulation order is fixed by
// a DeviceProfile. Two profiles stand in for two accelerator architectures:
// same inputs, same code, different (but individually deterministic) sums.
// Elementwise operations are identical under every profile.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vtrain {

// ---------------------------------------------------------------------------
// Device profiles

enum class ReductionOrder { Sequential, Reversed, PairwiseTree, Chunked };

struct DeviceProfile {
  std::string name;
  ReductionOrder order = ReductionOrder::Sequential;
  std::size_t chunk_size = 0;  ///< only for Chunked, >= 1

  static DeviceProfile sequential();
  static DeviceProfile reversed();
  static DeviceProfile pairwise_tree();
  static DeviceProfile chunked(std::size_t chunk_size);

  /// Accepts "sequential", "reversed", "pairwise" and "chunked:N"
  /// ("chunked" alone means chunked:7).
  static DeviceProfile parse(std::string_view name);

  friend bool operator==(const DeviceProfile& a, const DeviceProfile& b) {
    return a.order == b.order && (a.order != ReductionOrder::Chunked || a.chunk_size == b.chunk_size);
  }
};

/// The four shipped profiles: sequential, reversed, pairwise, chunked:7.
std::vector<DeviceProfile> standard_profiles();

double reduce(std::span<const double> values, const DeviceProfile& profile);
float reduce(std::span<const float> values, const DeviceProfile& profile);

// ---------------------------------------------------------------------------
// Shared randomness

/// SplitMix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound) by rejection; bound >= 1.
  std::uint64_t below(std::uint64_t bound);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Tensors and layers

/// Row-major FP64 matrix. Vectors are 1 x n or n x 1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind { Dense, ReLU, Sigmoid, SoftmaxCrossEntropy, SigmoidCrossEntropy };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in = 0;   ///< Dense only
  std::size_t out = 0;  ///< Dense only

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0}; }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid, 0, 0}; }
  static LayerSpec softmax_cross_entropy() { return {LayerKind::SoftmaxCrossEntropy, 0, 0}; }
  static LayerSpec sigmoid_cross_entropy() { return {LayerKind::SigmoidCrossEntropy, 0, 0}; }

  bool is_loss() const {
    return kind == LayerKind::SoftmaxCrossEntropy || kind == LayerKind::SigmoidCrossEntropy;
  }
  bool has_parameters() const { return kind == LayerKind::Dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer stack ending in exactly one loss layer.
struct ModelSpec {
  std::vector<LayerSpec> layers;

  /// Throws DomainError for incompatible widths or a missing/misplaced loss.
  void validate(std::size_t input_dim) const;
  /// Activation width entering each layer (size layers.size() + 1; last entry
  /// is the logit width seen by the loss).
  std::vector<std::size_t> widths(std::size_t input_dim) const;
  const LayerSpec& loss() const { return layers.back(); }

  static ModelSpec mlp(std::size_t dim, std::size_t hidden, std::size_t classes);
  static ModelSpec logistic_regression(std::size_t dim);
};

/// Dense weight (out x in) and bias (1 x out) per Dense layer, in layer order.
struct ModelWeights {
  std::vector<Tensor> tensors;

  std::size_t parameter_count() const;
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// y[b][o] = reduce_i(x[b][i] * W[o][i]) + bias[o].
Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const DeviceProfile& profile);

struct DenseGrads {
  Tensor grad_x;
  Tensor grad_weight;
  Tensor grad_bias;
};

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weight,
                          const DeviceProfile& profile);

Tensor relu_forward(const Tensor& x);
/// `x` is the forward input.
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);
Tensor sigmoid_forward(const Tensor& x);
/// `y` is the forward output.
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;  ///< d(mean loss)/d(logits)
};

/// Mean softmax cross-entropy over the batch. labels[b] in [0, logits.cols).
LossResult softmax_xent_forward(const Tensor& logits, std::span<const int> labels, const DeviceProfile& profile);

/// Mean binary cross-entropy of sigmoid(logits); logits is B x 1, labels in {0, 1}.
LossResult sigmoid_xent_forward(const Tensor& logits, std::span<const int> labels, const DeviceProfile& profile);

/// Dense weights uniform in [-1/sqrt(in), 1/sqrt(in)), biases zero.
ModelWeights init_weights(const ModelSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Tensor features;  ///< n x dim
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

/// Gaussian-free blobs: class centers uniform in [0,1)^dim, points
/// center + 0.1 * U[0,1)^dim, labels round-robin.
Dataset make_dataset(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng);

/// Minibatch order: one Fisher-Yates shuffle per epoch drawn from the shared
/// Rng, batches are consecutive slices of the concatenated epoch orders.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, std::size_t batch_size);

  /// Sample indices for `step` (0-based). Steps must be requested in order.
  std::vector<std::size_t> next(Rng& rng);

 private:
  std::size_t n_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
};

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows);
std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows);

}  // namespace vtrain
