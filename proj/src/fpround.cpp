#include "vtrain/fpround.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "vtrain/error.hpp"

namespace vtrain {
namespace {

constexpr std::uint64_t kMantissaMask = (std::uint64_t{1} << 52) - 1;
constexpr int kFloatMinExponent = -126;
constexpr int kFloatMaxExponent = 127;

enum class Mode { Nearest, TowardZero, AwayFromZero };

// Largest finite grid value: (2 - 2^-(b_r - 9)) * 2^127.
double max_grid_value(int b_r) {
  return std::ldexp(2.0 - std::ldexp(1.0, -(b_r - 9)), kFloatMaxExponent);
}

// Rounds |x| onto the grid. `magnitude` must be finite and >= 0.
double round_magnitude(double magnitude, int b_r, Mode mode) {
  if (magnitude == 0.0) return 0.0;

  const auto bits = std::bit_cast<std::uint64_t>(magnitude);
  const int biased = static_cast<int>(bits >> 52);
  std::uint64_t significand;
  int lsb_exponent;  // magnitude == significand * 2^lsb_exponent
  int exponent;
  if (biased == 0) {
    significand = bits & kMantissaMask;
    lsb_exponent = -1074;
    exponent = std::ilogb(magnitude);
  } else {
    significand = (bits & kMantissaMask) | (std::uint64_t{1} << 52);
    lsb_exponent = biased - 1075;
    exponent = biased - 1023;
  }

  // Below 2^-126 the FP32 grid has the fixed subnormal spacing.
  const int quantum_exponent = std::max(exponent, kFloatMinExponent) + 9 - b_r;
  const int shift = quantum_exponent - lsb_exponent;  // always > 0 for b_r <= 32

  std::uint64_t quotient = 0;
  bool inexact = significand != 0;
  bool above_half = false;
  bool exactly_half = false;
  if (shift < 64) {
    quotient = significand >> shift;
    const std::uint64_t remainder = significand & ((std::uint64_t{1} << shift) - 1);
    const std::uint64_t half = std::uint64_t{1} << (shift - 1);
    inexact = remainder != 0;
    above_half = remainder > half;
    exactly_half = remainder == half;
  }

  switch (mode) {
    case Mode::Nearest:
      if (above_half || (exactly_half && (quotient & 1U))) ++quotient;
      break;
    case Mode::TowardZero:
      break;
    case Mode::AwayFromZero:
      if (inexact) ++quotient;
      break;
  }

  const double result = std::ldexp(static_cast<double>(quotient), quantum_exponent);
  if (result > max_grid_value(b_r)) throw DomainError("out of representable range");
  return result;
}

void check_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("non-finite value");
}

}  // namespace

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::Down:
      return "down";
    case Direction::Ignore:
      return "ignore";
    case Direction::Up:
      return "up";
  }
  return "invalid";
}

Direction direction_from_code(unsigned code) {
  if (code > 2) throw DomainError("invalid rounding direction code " + std::to_string(code));
  return static_cast<Direction>(code);
}

void check_rounding_bits(int b_r) {
  if (b_r < kMinRoundingBits || b_r > kMaxRoundingBits) {
    throw DomainError("rounding amount b_r must be in [10, 32], got " + std::to_string(b_r));
  }
}

double tau_ceiling(int b_r) {
  check_rounding_bits(b_r);
  return std::ldexp(0.5, 9 - b_r);
}

double rnd(double x, int b_r) {
  check_rounding_bits(b_r);
  check_finite(x);
  const double magnitude = round_magnitude(std::fabs(x), b_r, Mode::Nearest);
  if (magnitude == 0.0) return 0.0;
  return std::signbit(x) ? -magnitude : magnitude;
}

double epsilon(int b_r, double exponent_scale) {
  check_rounding_bits(b_r);
  return std::ldexp(exponent_scale, 9 - b_r);
}

double exponent_scale(double x) {
  check_finite(x);
  if (x == 0.0) return std::ldexp(1.0, kFloatMinExponent);
  return std::ldexp(1.0, std::max(std::ilogb(x), kFloatMinExponent));
}

Direction direction(double x, const RoundingParams& params) {
  const double rounded = rnd(x, params.b_r);
  const double threshold = exponent_scale(x) * params.tau;
  if (std::fabs(x - rounded) > threshold) {
    if (x < rounded) return Direction::Up;
    if (x > rounded) return Direction::Down;
  }
  return Direction::Ignore;
}

GridNeighbors grid_neighbors(double x, int b_r) {
  check_rounding_bits(b_r);
  check_finite(x);
  const double magnitude = std::fabs(x);
  const double toward = round_magnitude(magnitude, b_r, Mode::TowardZero);
  const double away = round_magnitude(magnitude, b_r, Mode::AwayFromZero);
  if (std::signbit(x)) return {away == 0.0 ? 0.0 : -away, toward == 0.0 ? 0.0 : -toward};
  return {toward, away};
}

double rev(double x, int b_r, Direction c) {
  const double rounded = rnd(x, b_r);
  if (x < rounded && c == Direction::Down) return grid_neighbors(x, b_r).below;
  if (x > rounded && c == Direction::Up) return grid_neighbors(x, b_r).above;
  return rounded;
}

bool on_grid(double x, int b_r) {
  if (!std::isfinite(x)) return false;
  try {
    return rnd(x, b_r) == x;
  } catch (const DomainError&) {
    return false;
  }
}

}  // namespace vtrain
