#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>

#include "oracles.hpp"
#include "vtrain/error.hpp"
#include "vtrain/fpround.hpp"

using namespace vtrain;

namespace {

constexpr double k2m23 = 1.0 / 8388608.0;

double random_value(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> mant(1.0, 2.0);
  std::uniform_int_distribution<int> exp(-140, 100);
  std::bernoulli_distribution neg(0.5);
  const double v = std::ldexp(mant(gen), exp(gen));
  return neg(gen) ? -v : v;
}

}  // namespace

TEST_CASE("rnd fixed points and simple cases") {
  CHECK(rnd(0.0, 32) == 0.0);
  CHECK(!std::signbit(rnd(-0.0, 32)));
  const double table2 = static_cast<double>(std::bit_cast<float>(0b00111110010011001100110011001101u));
  CHECK(rnd(table2, 32) == table2);
  CHECK(rnd(1.0 + std::ldexp(1.0, -24), 32) == 1.0);  // tie, even neighbor
  CHECK(rnd(1.0 + 3 * std::ldexp(1.0, -24), 32) == 1.0 + std::ldexp(1.0, -22));
  CHECK(rnd(-1.5, 26) == -1.5);
}

TEST_CASE("rnd matches the FP32 bit-pattern oracle") {
  std::mt19937_64 gen(1);
  for (int b_r : {10, 16, 26, 29, 32}) {
    for (int i = 0; i < 200000; ++i) {
      const double x = random_value(gen);
      REQUIRE_MESSAGE(rnd(x, b_r) == oracle::rnd(x, b_r), "x=" << x << " b_r=" << b_r);
    }
  }
}

TEST_CASE("rnd near grid points and midpoints") {
  std::mt19937_64 gen(2);
  for (int b_r : {26, 29, 32}) {
    for (int i = 0; i < 50000; ++i) {
      const double g = oracle::rnd(random_value(gen), b_r);
      const double eps = epsilon(b_r, exponent_scale(g));
      for (double off : {0.5, -0.5, 0.5 - 1e-9, 0.5 + 1e-9, 1e-12, -1e-12}) {
        const double x = g + off * eps;
        REQUIRE(rnd(x, b_r) == oracle::rnd(x, b_r));
      }
    }
  }
}

TEST_CASE("rnd subnormal and overflow edges") {
  const double tiny = std::ldexp(1.0, -149);
  CHECK(rnd(tiny, 32) == tiny);
  CHECK(rnd(tiny / 2, 32) == 0.0);  // tie to even (zero)
  CHECK(rnd(tiny * 0.75, 32) == tiny);
  CHECK(rnd(std::ldexp(1.0, -126) * 1.3, 26) == oracle::rnd(std::ldexp(1.0, -126) * 1.3, 26));
  CHECK(rnd(3e38, 32) == oracle::rnd(3e38, 32));
  CHECK_THROWS_WITH_AS(rnd(1e39, 32), doctest::Contains("out of representable range"), DomainError);
  CHECK_THROWS_WITH_AS(rnd(NAN, 32), doctest::Contains("non-finite"), DomainError);
  CHECK_THROWS_AS(rnd(INFINITY, 32), DomainError);
  CHECK_THROWS_AS(rnd(1.0, 9), DomainError);
  CHECK_THROWS_AS(rnd(1.0, 33), DomainError);
}

TEST_CASE("epsilon and exponent_scale") {
  CHECK(epsilon(32, 1.0) == k2m23);
  CHECK(epsilon(26, 1.0) == std::ldexp(1.0, -17));
  CHECK(epsilon(32, 2.0) == std::ldexp(1.0, -22));
  CHECK(exponent_scale(1.5) == 1.0);
  CHECK(exponent_scale(0.2) == 0.125);
  CHECK(exponent_scale(-6.0) == 4.0);
  CHECK(exponent_scale(0.0) == std::ldexp(1.0, -126));
  CHECK(exponent_scale(1e-300) == std::ldexp(1.0, -126));
  CHECK_THROWS_AS(exponent_scale(NAN), DomainError);
  CHECK(tau_ceiling(32) == 0.5 * k2m23);
  CHECK(kTauFloor == 0.25 * k2m23);
}

TEST_CASE("direction") {
  const RoundingParams p{32, 0.25 * k2m23};
  CHECK(direction(1.0, p) == Direction::Ignore);
  // Distance to 1 + 2^-23 is exactly tau, which is not strictly greater.
  CHECK(direction(1.0 + 0.75 * k2m23, p) == Direction::Ignore);
  CHECK(direction(1.0 + 0.6 * k2m23, p) == Direction::Up);
  CHECK(direction(1.0 + 0.4 * k2m23, p) == Direction::Down);
  CHECK(direction(1.0 + 0.2 * k2m23, p) == Direction::Ignore);
  CHECK(direction(-(1.0 + 0.4 * k2m23), p) == Direction::Up);
  CHECK(direction(0.0, p) == Direction::Ignore);
  // Below the scale floor the distance never exceeds the threshold.
  CHECK(direction(1e-300, p) == Direction::Ignore);
}

TEST_CASE("grid_neighbors and rev") {
  CHECK(grid_neighbors(1.0, 32).below == 1.0);
  CHECK(grid_neighbors(1.0, 32).above == 1.0);
  const auto n = grid_neighbors(1.0 + 0.5 * k2m23, 32);
  CHECK(n.below == 1.0);
  CHECK(n.above == 1.0 + k2m23);
  const auto m = grid_neighbors(-(1.0 + 0.5 * k2m23), 32);
  CHECK(m.below == -n.above);
  CHECK(m.above == -n.below);

  CHECK(rev(1.0 + 0.4 * k2m23, 32, Direction::Ignore) == 1.0);
  CHECK(rev(1.0 + 0.4 * k2m23, 32, Direction::Up) == 1.0 + k2m23);
  CHECK(rev(1.0 + 0.6 * k2m23, 32, Direction::Up) == 1.0 + k2m23);
  CHECK(rev(1.0 + 0.6 * k2m23, 32, Direction::Down) == 1.0);
  CHECK(rev(1.0 + 0.4 * k2m23, 32, Direction::Down) == 1.0);
  CHECK(rev(1.0, 32, Direction::Up) == 1.0);
}

TEST_CASE("direction codes") {
  CHECK(direction_from_code(0) == Direction::Down);
  CHECK(direction_from_code(2) == Direction::Up);
  CHECK_THROWS_AS(direction_from_code(3), DomainError);
  CHECK(to_string(Direction::Ignore) == "ignore");
}

TEST_CASE("idempotence, grid membership and distance bound") {
  std::mt19937_64 gen(3);
  for (int b_r : {26, 29, 32}) {
    for (int i = 0; i < 100000; ++i) {
      const double x = random_value(gen);
      const double r = rnd(x, b_r);
      REQUIRE(rnd(r, b_r) == r);
      REQUIRE(direction(r, {b_r, kTauFloor}) == Direction::Ignore);
      REQUIRE(oracle::on_grid(r, b_r));
      REQUIRE(std::fabs(r - x) <= 0.5 * epsilon(b_r, exponent_scale(r)));
      REQUIRE(rnd(-x, b_r) == -r);
      for (Direction c : {Direction::Down, Direction::Ignore, Direction::Up}) {
        REQUIRE(oracle::on_grid(rev(x, b_r, c), b_r));
      }
    }
  }
}

TEST_CASE("coarser grids are subsets") {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 100000; ++i) {
    const double r = rnd(random_value(gen), 26);
    REQUIRE(on_grid(r, 29));
    REQUIRE(on_grid(r, 32));
    REQUIRE(rnd(r, 32) == r);
  }
}

TEST_CASE("sync property under bounded perturbation") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int b_r : {26, 29, 32}) {
    const double lo = kTauFloor;
    const double hi = tau_ceiling(b_r);
    std::size_t checked = 0;
    for (int i = 0; i < 100000; ++i) {
      const double xt = random_value(gen);
      const double scale = exponent_scale(xt);
      const double eps_rel = epsilon(b_r, 1.0);
      const double tau = lo + (hi - lo) * unit(gen);
      const double bound = std::min({0.25 * eps_rel, tau, 0.5 * eps_rel - tau});
      const double xa = xt + (2 * unit(gen) - 1) * bound * scale;
      if (exponent_scale(xa) != scale || std::fabs(xa - xt) >= bound * scale) continue;
      const Direction c = direction(xt, {b_r, tau});
      REQUIRE(rev(xa, b_r, c) == rev(xt, b_r, c));
      REQUIRE(rev(xt, b_r, c) == rnd(xt, b_r));
      ++checked;
    }
    CHECK(checked > 90000);
  }
}

TEST_CASE("sync can fail when tau leaves less than d below the midpoint") {
  const double eps = k2m23;
  const double tau = 0.495 * eps;
  const double xt = 1.0 + 0.49 * eps;
  const double xa = 1.0 + 0.51 * eps;  // d = 0.02 eps < min(0.25 eps, tau)
  const Direction c = direction(xt, {32, tau});
  CHECK(c == Direction::Ignore);
  CHECK(rev(xa, 32, c) != rnd(xt, 32));
}
