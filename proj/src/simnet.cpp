#include "vtrain/simnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "vtrain/error.hpp"

namespace vtrain {

// ---------------------------------------------------------------------------
// Profiles and reductions

DeviceProfile DeviceProfile::sequential() { return {"sequential", ReductionOrder::Sequential, 0}; }
DeviceProfile DeviceProfile::reversed() { return {"reversed", ReductionOrder::Reversed, 0}; }
DeviceProfile DeviceProfile::pairwise_tree() { return {"pairwise", ReductionOrder::PairwiseTree, 0}; }

DeviceProfile DeviceProfile::chunked(std::size_t chunk_size) {
  if (chunk_size == 0) throw DomainError("chunk size must be >= 1");
  return {"chunked:" + std::to_string(chunk_size), ReductionOrder::Chunked, chunk_size};
}

DeviceProfile DeviceProfile::parse(std::string_view name) {
  if (name == "sequential") return sequential();
  if (name == "reversed") return reversed();
  if (name == "pairwise" || name == "pairwise_tree") return pairwise_tree();
  if (name == "chunked") return chunked(7);
  if (name.starts_with("chunked:")) {
    const auto digits = name.substr(8);
    std::size_t n = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || n == 0) {
      throw DomainError("invalid chunk size in profile '" + std::string(name) + "'");
    }
    return chunked(n);
  }
  throw DomainError("unknown device profile '" + std::string(name) + "'");
}

std::vector<DeviceProfile> standard_profiles() {
  return {DeviceProfile::sequential(), DeviceProfile::reversed(), DeviceProfile::pairwise_tree(),
          DeviceProfile::chunked(7)};
}

namespace {

template <typename T>
T sum_forward(const T* v, std::size_t n) {
  T acc = v[0];
  for (std::size_t i = 1; i < n; ++i) acc += v[i];
  return acc;
}

template <typename T>
T sum_pairwise(const T* v, std::size_t n) {
  if (n == 1) return v[0];
  const std::size_t half = n / 2;
  const T left = sum_pairwise(v, half);
  const T right = sum_pairwise(v + half, n - half);
  return left + right;
}

template <typename T>
T reduce_impl(std::span<const T> values, const DeviceProfile& profile) {
  const std::size_t n = values.size();
  if (n == 0) return T{0};
  const T* v = values.data();
  switch (profile.order) {
    case ReductionOrder::Sequential:
      return sum_forward(v, n);
    case ReductionOrder::Reversed: {
      T acc = v[n - 1];
      for (std::size_t i = n - 1; i-- > 0;) acc += v[i];
      return acc;
    }
    case ReductionOrder::PairwiseTree:
      return sum_pairwise(v, n);
    case ReductionOrder::Chunked: {
      const std::size_t c = profile.chunk_size;
      if (c == 0) throw DomainError("chunk size must be >= 1");
      T acc = sum_forward(v, std::min(c, n));
      for (std::size_t start = c; start < n; start += c) acc += sum_forward(v + start, std::min(c, n - start));
      return acc;
    }
  }
  return T{0};
}

std::vector<double>& scratch(std::size_t n) {
  thread_local std::vector<double> buffer;
  buffer.resize(n);
  return buffer;
}

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

double reduce(std::span<const double> values, const DeviceProfile& profile) { return reduce_impl(values, profile); }
float reduce(std::span<const float> values, const DeviceProfile& profile) { return reduce_impl(values, profile); }

// ---------------------------------------------------------------------------
// Rng

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw DomainError("Rng::below bound must be >= 1");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % bound;
  }
}

// ---------------------------------------------------------------------------
// Tensors, layer specs

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw DomainError("tensor data length does not match shape");
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense:
      return "dense";
    case LayerKind::ReLU:
      return "relu";
    case LayerKind::Sigmoid:
      return "sigmoid";
    case LayerKind::SoftmaxCrossEntropy:
      return "softmax_xent";
    case LayerKind::SigmoidCrossEntropy:
      return "sigmoid_xent";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::ReLU, LayerKind::Sigmoid, LayerKind::SoftmaxCrossEntropy,
                      LayerKind::SigmoidCrossEntropy}) {
    if (to_string(k) == name) return k;
  }
  throw DomainError("unknown layer kind '" + std::string(name) + "'");
}

std::vector<std::size_t> ModelSpec::widths(std::size_t input_dim) const {
  std::vector<std::size_t> w{input_dim};
  for (const auto& layer : layers) w.push_back(layer.kind == LayerKind::Dense ? layer.out : w.back());
  return w;
}

void ModelSpec::validate(std::size_t input_dim) const {
  if (layers.empty() || !layers.back().is_loss()) throw DomainError("model must end with a loss layer");
  std::size_t width = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.is_loss() && i + 1 != layers.size()) throw DomainError("loss layer must be last");
    if (layer.kind == LayerKind::Dense) {
      if (layer.in == 0 || layer.out == 0) throw DomainError("dense layer dimensions must be positive");
      if (layer.in != width) {
        throw DomainError("dense layer " + std::to_string(i) + " expects input width " + std::to_string(layer.in) +
                          " but receives " + std::to_string(width));
      }
      width = layer.out;
    }
  }
  if (layers.back().kind == LayerKind::SigmoidCrossEntropy && width != 1) {
    throw DomainError("sigmoid cross-entropy needs a single logit");
  }
  if (layers.back().kind == LayerKind::SoftmaxCrossEntropy && width < 2) {
    throw DomainError("softmax cross-entropy needs at least two logits");
  }
}

ModelSpec ModelSpec::mlp(std::size_t dim, std::size_t hidden, std::size_t classes) {
  return {{LayerSpec::dense(dim, hidden), LayerSpec::relu(), LayerSpec::dense(hidden, classes),
           LayerSpec::softmax_cross_entropy()}};
}

ModelSpec ModelSpec::logistic_regression(std::size_t dim) {
  return {{LayerSpec::dense(dim, 1), LayerSpec::sigmoid_cross_entropy()}};
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

// ---------------------------------------------------------------------------
// Layers

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const DeviceProfile& profile) {
  require(x.cols == weight.cols, "dense_forward: input width does not match weight");
  require(bias.size() == weight.rows, "dense_forward: bias length does not match weight");
  Tensor y(x.rows, weight.rows);
  auto& products = scratch(x.cols);
  for (std::size_t b = 0; b < x.rows; ++b) {
    const auto xr = x.row(b);
    for (std::size_t o = 0; o < weight.rows; ++o) {
      const auto wr = weight.row(o);
      for (std::size_t i = 0; i < x.cols; ++i) products[i] = xr[i] * wr[i];
      y.at(b, o) = reduce(products, profile) + bias.data[o];
    }
  }
  return y;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weight,
                          const DeviceProfile& profile) {
  require(grad_out.rows == x.rows, "dense_backward: batch size mismatch");
  require(grad_out.cols == weight.rows, "dense_backward: output width does not match weight");
  require(x.cols == weight.cols, "dense_backward: input width does not match weight");
  const std::size_t batch = x.rows;
  const std::size_t in = weight.cols;
  const std::size_t out = weight.rows;

  DenseGrads g{Tensor(batch, in), Tensor(out, in), Tensor(1, out)};
  auto& terms = scratch(std::max({in, out, batch}));

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t o = 0; o < out; ++o) terms[o] = grad_out.at(b, o) * weight.at(o, i);
      g.grad_x.at(b, i) = reduce(std::span<const double>(terms.data(), out), profile);
    }
  }
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t b = 0; b < batch; ++b) terms[b] = grad_out.at(b, o) * x.at(b, i);
      g.grad_weight.at(o, i) = reduce(std::span<const double>(terms.data(), batch), profile);
    }
    for (std::size_t b = 0; b < batch; ++b) terms[b] = grad_out.at(b, o);
    g.grad_bias.data[o] = reduce(std::span<const double>(terms.data(), batch), profile);
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  require(grad_out.rows == x.rows && grad_out.cols == x.cols, "relu_backward: shape mismatch");
  Tensor g(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) g.data[i] = x.data[i] > 0.0 ? grad_out.data[i] : 0.0;
  return g;
}

namespace {
double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = logistic(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
  require(grad_out.rows == y.rows && grad_out.cols == y.cols, "sigmoid_backward: shape mismatch");
  Tensor g(y.rows, y.cols);
  for (std::size_t i = 0; i < y.size(); ++i) g.data[i] = grad_out.data[i] * (y.data[i] * (1.0 - y.data[i]));
  return g;
}

LossResult softmax_xent_forward(const Tensor& logits, std::span<const int> labels, const DeviceProfile& profile) {
  require(labels.size() == logits.rows, "softmax_xent: label count does not match batch");
  require(logits.rows > 0 && logits.cols > 0, "softmax_xent: empty logits");
  const std::size_t batch = logits.rows;
  const std::size_t classes = logits.cols;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  LossResult r{0.0, Tensor(batch, classes)};
  std::vector<double> exps(classes);
  std::vector<double> row_loss(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DomainError("invalid label " + std::to_string(label) + " at batch index " + std::to_string(b));
    }
    const auto z = logits.row(b);
    const double m = *std::max_element(z.begin(), z.end());
    for (std::size_t c = 0; c < classes; ++c) exps[c] = std::exp(z[c] - m);
    const double total = reduce(exps, profile);
    row_loss[b] = std::log(total) - (z[static_cast<std::size_t>(label)] - m);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = exps[c] / total;
      const double target = static_cast<std::size_t>(label) == c ? 1.0 : 0.0;
      r.grad_logits.at(b, c) = (p - target) * inv_batch;
    }
  }
  r.loss = reduce(row_loss, profile) * inv_batch;
  return r;
}

LossResult sigmoid_xent_forward(const Tensor& logits, std::span<const int> labels, const DeviceProfile& profile) {
  require(labels.size() == logits.rows, "sigmoid_xent: label count does not match batch");
  require(logits.cols == 1, "sigmoid_xent: logits must be a single column");
  const std::size_t batch = logits.rows;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  LossResult r{0.0, Tensor(batch, 1)};
  std::vector<double> row_loss(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label != 0 && label != 1) {
      throw DomainError("invalid label " + std::to_string(label) + " at batch index " + std::to_string(b));
    }
    const double z = logits.data[b];
    const double y = static_cast<double>(label);
    row_loss[b] = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    r.grad_logits.data[b] = (logistic(z) - y) * inv_batch;
  }
  r.loss = reduce(row_loss, profile) * inv_batch;
  return r;
}

ModelWeights init_weights(const ModelSpec& spec, Rng& rng) {
  ModelWeights w;
  for (const auto& layer : spec.layers) {
    if (layer.kind != LayerKind::Dense) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    Tensor weight(layer.out, layer.in);
    for (double& v : weight.data) v = rng.uniform(-bound, bound);
    w.tensors.push_back(std::move(weight));
    w.tensors.emplace_back(1, layer.out);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Data

Dataset make_dataset(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
  if (n == 0 || dim == 0 || classes == 0) throw DomainError("dataset size, dim and classes must be >= 1");
  Tensor centers(classes, dim);
  for (double& v : centers.data) v = rng.uniform();
  Dataset d{Tensor(n, dim), std::vector<int>(n), classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < dim; ++j) d.features.at(i, j) = centers.at(label, j) + 0.1 * rng.uniform();
  }
  return d;
}

BatchSchedule::BatchSchedule(std::size_t dataset_size, std::size_t batch_size)
    : n_(dataset_size), batch_size_(batch_size), cursor_(dataset_size) {
  if (batch_size == 0 || batch_size > dataset_size) throw DomainError("batch size must be in [1, dataset size]");
}

std::vector<std::size_t> BatchSchedule::next(Rng& rng) {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == n_) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t i = n_; i-- > 1;) std::swap(order_[i], order_[rng.below(i + 1)]);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), source.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = source.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

}  // namespace vtrain
