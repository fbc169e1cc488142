#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "vtrain/error.hpp"
#include "vtrain/simnet.hpp"

using namespace vtrain;

namespace {

std::uint64_t splitmix(std::uint64_t& s) {
  s += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(r, c);
  for (double& v : t.data) v = u(gen);
  return t;
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8}); }

}  // namespace

TEST_CASE("reduce orders match reference sums") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t n = 1; n <= 70; ++n) {
    std::vector<double> v(n);
    for (double& x : v) x = u(gen) * std::pow(10.0, static_cast<int>(gen() % 7) - 3);
    REQUIRE(reduce(v, DeviceProfile::sequential()) == oracle::sum_left_to_right(v));
    REQUIRE(reduce(v, DeviceProfile::reversed()) == oracle::sum_right_to_left(v));
    REQUIRE(reduce(v, DeviceProfile::pairwise_tree()) == oracle::sum_tree(v));
    REQUIRE(reduce(v, DeviceProfile::chunked(7)) == oracle::sum_chunked(v, 7));
    REQUIRE(reduce(v, DeviceProfile::chunked(1)) == oracle::sum_chunked(v, 1));
  }
}

TEST_CASE("reduce examples") {
  const std::vector<double> v{0.1, -0.1, 0.2};
  CHECK(reduce(v, DeviceProfile::sequential()) == 0.2);
  for (const auto& p : standard_profiles()) {
    const std::vector<double> one{3.25};
    CHECK(reduce(one, p) == 3.25);
    const std::vector<double> ints{1, 2, 3, 4, 5, 6, 7, 8, 9, 1e6, -7};
    CHECK(reduce(ints, p) == 1000038.0);
  }
  CHECK(reduce(std::vector<double>{}, DeviceProfile::sequential()) == 0.0);
}

TEST_CASE("FP32 accumulation order changes the sum") {
  const float a = 0.1f, b = -0.1f, c = 0.2f;
  const std::vector<float> abc{a, b, c}, acb{a, c, b};
  CHECK(std::bit_cast<std::uint32_t>(reduce(abc, DeviceProfile::sequential())) == 0x3E4CCCCDu);
  CHECK(std::bit_cast<std::uint32_t>(reduce(acb, DeviceProfile::sequential())) == 0x3E4CCCCEu);
  CHECK(static_cast<double>(reduce(abc, DeviceProfile::sequential())) == doctest::Approx(0.200000002980).epsilon(1e-11));
  CHECK(static_cast<double>(reduce(acb, DeviceProfile::sequential())) == doctest::Approx(0.200000017881).epsilon(1e-11));

  const std::vector<float> row{10.02f, 13.162813186645508f, 0.2f};
  CHECK(std::bit_cast<std::uint32_t>(reduce(row, DeviceProfile::sequential())) == 0x41BB1001u);
  CHECK(std::bit_cast<std::uint32_t>(reduce(row, DeviceProfile::reversed())) == 0x41BB1000u);
}

TEST_CASE("profiles diverge on long vectors and stay tiny") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int differ = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(64);
    for (double& x : v) x = u(gen);
    const double s = reduce(v, DeviceProfile::sequential());
    const double t = reduce(v, DeviceProfile::pairwise_tree());
    if (s != t) ++differ;
    double abs_sum = 0;
    for (double x : v) abs_sum += std::fabs(x);
    CHECK(std::fabs(s - t) <= 64 * abs_sum * 0x1p-53);
  }
  CHECK(differ > 0);
}

TEST_CASE("profile parsing") {
  CHECK(DeviceProfile::parse("sequential") == DeviceProfile::sequential());
  CHECK(DeviceProfile::parse("pairwise_tree") == DeviceProfile::pairwise_tree());
  CHECK(DeviceProfile::parse("chunked") == DeviceProfile::chunked(7));
  CHECK(DeviceProfile::parse("chunked:3").chunk_size == 3);
  CHECK_THROWS_AS(DeviceProfile::parse("chunked:0"), DomainError);
  CHECK_THROWS_AS(DeviceProfile::parse("chunked:x"), DomainError);
  CHECK_THROWS_AS(DeviceProfile::parse("gpu"), DomainError);
  CHECK(standard_profiles().size() == 4);
}

TEST_CASE("SplitMix64 stream") {
  std::uint64_t s = 0;
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFull);
  for (std::uint64_t seed : {1ull, 42ull, 0xFFFFFFFFFFFFFFFFull}) {
    Rng r(seed);
    s = seed;
    for (int i = 0; i < 1000; ++i) REQUIRE(r.next_u64() == splitmix(s));
  }
  Rng u(7);
  s = 7;
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    REQUIRE(x == static_cast<double>(splitmix(s) >> 11) * 0x1p-53);
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
  Rng b(9);
  std::vector<int> counts(5);
  for (int i = 0; i < 5000; ++i) {
    const auto k = b.below(5);
    REQUIRE(k < 5);
    ++counts[k];
  }
  for (int c : counts) CHECK(c > 800);
  CHECK(b.below(1) == 0);
}

TEST_CASE("dense_forward") {
  std::mt19937_64 gen(3);
  Tensor x = random_tensor(2, 3, gen);
  Tensor id(3, 3);
  for (int i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  CHECK(dense_forward(x, id, Tensor(1, 3), DeviceProfile::sequential()) == x);

  CHECK(dense_forward(Tensor(1, 1, {2.0}), Tensor(1, 1, {3.0}), Tensor(1, 1, {0.5}), DeviceProfile::reversed())
            .data[0] == 6.5);

  Tensor xb = random_tensor(5, 3, gen);
  Tensor w = random_tensor(4, 3, gen);
  Tensor b = random_tensor(1, 4, gen);
  const Tensor y = dense_forward(xb, w, b, DeviceProfile::sequential());
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t o = 0; o < 4; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s = i == 0 ? xb.at(r, i) * w.at(o, i) : s + xb.at(r, i) * w.at(o, i);
      REQUIRE(y.at(r, o) == s + b.data[o]);
    }
  }
  CHECK_THROWS_AS(dense_forward(xb, Tensor(4, 2), b, DeviceProfile::sequential()), DomainError);
  CHECK_THROWS_AS(dense_forward(xb, w, Tensor(1, 3), DeviceProfile::sequential()), DomainError);
}

TEST_CASE("dense_backward trivial cases") {
  std::mt19937_64 gen(4);
  Tensor x = random_tensor(3, 4, gen);
  Tensor w = random_tensor(2, 4, gen);
  const auto z = dense_backward(Tensor(3, 2), x, w, DeviceProfile::sequential());
  for (const Tensor* t : {&z.grad_x, &z.grad_weight, &z.grad_bias}) {
    for (double v : t->data) CHECK(v == 0.0);
  }
  const auto g = dense_backward(Tensor(1, 1, {0.5}), Tensor(1, 1, {3.0}), Tensor(1, 1, {2.0}),
                                DeviceProfile::sequential());
  CHECK(g.grad_x.data[0] == 1.0);
  CHECK(g.grad_weight.data[0] == 1.5);
  CHECK(g.grad_bias.data[0] == 0.5);
  CHECK_THROWS_AS(dense_backward(Tensor(3, 3), x, w, DeviceProfile::sequential()), DomainError);
}

TEST_CASE("dense gradients match central finite differences") {
  std::mt19937_64 gen(5);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t batch = 1 + gen() % 4, in = 1 + gen() % 6, out = 1 + gen() % 5;
    Tensor x = random_tensor(batch, in, gen);
    Tensor w = random_tensor(out, in, gen);
    Tensor b = random_tensor(1, out, gen);
    Tensor g = random_tensor(batch, out, gen);
    const auto profile = standard_profiles()[trial % 4];
    // L = sum(g * dense(x))
    auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
      const Tensor y = dense_forward(xx, ww, bb, profile);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += g.data[i] * y.data[i];
      return s;
    };
    const auto grads = dense_backward(g, x, w, profile);
    auto check = [&](Tensor& param, const Tensor& analytic) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data[i];
        param.data[i] = saved + h;
        const double up = loss(x, w, b);
        param.data[i] = saved - h;
        const double down = loss(x, w, b);
        param.data[i] = saved;
        REQUIRE(rel_err((up - down) / (2 * h), analytic.data[i]) < 1e-5);
      }
    };
    check(x, grads.grad_x);
    check(w, grads.grad_weight);
    check(b, grads.grad_bias);
  }
}

TEST_CASE("MLP chain gradients through activations and both losses") {
  std::mt19937_64 gen(6);
  const double h = 1e-6;
  const auto profile = DeviceProfile::pairwise_tree();
  for (int trial = 0; trial < 20; ++trial) {
    const bool sigmoid_head = trial % 2 == 1;
    const std::size_t batch = 3, in = 4, hidden = 5, classes = sigmoid_head ? 1 : 3;
    Tensor x = random_tensor(batch, in, gen);
    Tensor w1 = random_tensor(hidden, in, gen), b1 = random_tensor(1, hidden, gen);
    Tensor w2 = random_tensor(classes, hidden, gen), b2 = random_tensor(1, classes, gen);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = static_cast<int>(gen() % (sigmoid_head ? 2 : classes));
    const bool use_relu = trial % 4 < 2;

    auto forward = [&](Tensor& h1, Tensor& a1) {
      h1 = dense_forward(x, w1, b1, profile);
      a1 = use_relu ? relu_forward(h1) : sigmoid_forward(h1);
      const Tensor z = dense_forward(a1, w2, b2, profile);
      return sigmoid_head ? sigmoid_xent_forward(z, labels, profile) : softmax_xent_forward(z, labels, profile);
    };
    Tensor h1, a1;
    const auto res = forward(h1, a1);
    const auto g2 = dense_backward(res.grad_logits, a1, w2, profile);
    const Tensor ga = use_relu ? relu_backward(g2.grad_x, h1) : sigmoid_backward(g2.grad_x, a1);
    const auto g1 = dense_backward(ga, x, w1, profile);

    auto check = [&](Tensor& param, const Tensor& analytic) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data[i];
        Tensor th, ta;
        param.data[i] = saved + h;
        const double up = forward(th, ta).loss;
        param.data[i] = saved - h;
        const double down = forward(th, ta).loss;
        param.data[i] = saved;
        const double fd = (up - down) / (2 * h);
        // ReLU kinks make finite differences meaningless right at zero.
        REQUIRE((rel_err(fd, analytic.data[i]) < 1e-5 || std::fabs(fd - analytic.data[i]) < 1e-9));
      }
    };
    check(w1, g1.grad_weight);
    check(b1, g1.grad_bias);
    check(w2, g2.grad_weight);
    check(b2, g2.grad_bias);
  }
}

TEST_CASE("activations and losses") {
  const Tensor x(1, 2, {-1.0, 2.0});
  CHECK(relu_forward(x).data == std::vector<double>{0.0, 2.0});
  CHECK(relu_backward(Tensor(1, 2, {5.0, 5.0}), x).data == std::vector<double>{0.0, 5.0});
  CHECK(sigmoid_forward(Tensor(1, 1, {0.0})).data[0] == 0.5);
  CHECK(sigmoid_forward(Tensor(1, 1, {-800.0})).data[0] == 0.0);

  for (std::size_t k : {2u, 3u, 10u}) {
    const std::vector<int> labels{0, 1};
    const auto r = softmax_xent_forward(Tensor(2, k, 0.7), labels, DeviceProfile::sequential());
    CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-14));
  }
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(softmax_xent_forward(Tensor(1, 3), bad, DeviceProfile::sequential()), DomainError);
  const std::vector<int> bad2{2};
  CHECK_THROWS_AS(sigmoid_xent_forward(Tensor(1, 1), bad2, DeviceProfile::sequential()), DomainError);
  const std::vector<int> one{1};
  const auto s = sigmoid_xent_forward(Tensor(1, 1, {0.0}), one, DeviceProfile::sequential());
  CHECK(s.loss == doctest::Approx(std::log(2.0)));
  CHECK(s.grad_logits.data[0] == -0.5);
  const auto big = sigmoid_xent_forward(Tensor(1, 1, {-1000.0}), one, DeviceProfile::sequential());
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss == doctest::Approx(1000.0));
}

TEST_CASE("init_weights") {
  const auto spec = ModelSpec::mlp(16, 32, 3);
  Rng a(5), b(5);
  const auto wa = init_weights(spec, a);
  const auto wb = init_weights(spec, b);
  CHECK(wa == wb);
  REQUIRE(wa.tensors.size() == 4);
  CHECK(wa.tensors[0].rows == 32);
  CHECK(wa.tensors[0].cols == 16);
  for (double v : wa.tensors[1].data) CHECK(v == 0.0);
  for (double v : wa.tensors[0].data) CHECK(std::fabs(v) <= 0.25);
  CHECK(wa.parameter_count() == 16 * 32 + 32 + 32 * 3 + 3);

  Rng c(5);
  const double first = -0.25 + 0.5 * c.uniform();
  CHECK(wa.tensors[0].data[0] == first);

  Rng d(1);
  const auto one = init_weights(ModelSpec{{LayerSpec::dense(1, 4), LayerSpec::sigmoid_cross_entropy()}}, d);
  for (double v : one.tensors[0].data) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("model spec validation") {
  CHECK_NOTHROW(ModelSpec::mlp(4, 8, 3).validate(4));
  CHECK_THROWS_AS(ModelSpec::mlp(4, 8, 3).validate(5), DomainError);
  CHECK_THROWS_AS((ModelSpec{{LayerSpec::dense(4, 2)}}.validate(4)), DomainError);
  CHECK_THROWS_AS((ModelSpec{{LayerSpec::softmax_cross_entropy(), LayerSpec::softmax_cross_entropy()}}.validate(4)),
                  DomainError);
  CHECK_THROWS_AS((ModelSpec{{LayerSpec::dense(4, 1), LayerSpec::softmax_cross_entropy()}}.validate(4)), DomainError);
  CHECK(ModelSpec::mlp(4, 8, 3).widths(4) == std::vector<std::size_t>{4, 8, 8, 3, 3});
  CHECK(layer_kind_from_string("relu") == LayerKind::ReLU);
  CHECK_THROWS_AS(layer_kind_from_string("conv"), DomainError);
}

TEST_CASE("make_dataset") {
  Rng a(3), b(3);
  const auto d1 = make_dataset(30, 4, 3, a);
  const auto d2 = make_dataset(30, 4, 3, b);
  CHECK(d1.features == d2.features);
  CHECK(d1.labels == d2.labels);
  for (std::size_t i = 0; i < 30; ++i) CHECK(d1.labels[i] == static_cast<int>(i % 3));
  for (double v : d1.features.data) {
    CHECK(v >= 0.0);
    CHECK(v < 1.1);
  }
  Rng c(4);
  const auto small = make_dataset(3, 2, 3, c);
  CHECK(small.size() == 3);
  CHECK(small.labels == std::vector<int>{0, 1, 2});
}

TEST_CASE("batch schedule partitions each epoch") {
  Rng rng(11);
  BatchSchedule sched(10, 5);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (int k = 0; k < 2; ++k) {
      const auto idx = sched.next(rng);
      REQUIRE(idx.size() == 5);
      seen.insert(idx.begin(), idx.end());
    }
    CHECK(seen.size() == 10);
  }
  // Batches straddling an epoch boundary.
  Rng r1(12), r2(12);
  BatchSchedule s1(7, 3), s2(7, 3);
  for (int i = 0; i < 10; ++i) CHECK(s1.next(r1) == s2.next(r2));
  CHECK_THROWS_AS(BatchSchedule(3, 4), DomainError);
}
