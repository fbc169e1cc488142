#pragma once

// Grid arithmetic for reduced-precision rounding.
//
// The "b_r grid" is the set of FP32 values whose low (32 - b_r) mantissa bits
// are zero, i.e. FP32 numbers carrying (b_r - 9) explicit mantissa bits. All
// values are held as FP64. Rounding is done on the integer significand of the
// FP64 representation, so the result is the exact nearest grid value (one
// rounding step, ties to even) and never depends on FPU state.

#include <cstdint>
#include <string_view>

namespace vtrain {

/// Logged rounding decision. The numeric values are part of the log format.
enum class Direction : std::uint8_t { Down = 0, Ignore = 1, Up = 2 };

std::string_view to_string(Direction d);

/// Converts a raw code to a Direction; throws DomainError for codes > 2.
Direction direction_from_code(unsigned code);

inline constexpr int kMinRoundingBits = 10;
inline constexpr int kMaxRoundingBits = 32;

/// Lower end of the threshold search bracket: 0.25 * 2^-23.
inline constexpr double kTauFloor = 0.25 / 8388608.0;

/// Upper end of the threshold bracket (the rounding boundary): 0.5 * 2^(9 - b_r).
double tau_ceiling(int b_r);

struct RoundingParams {
  int b_r = 32;
  /// Relative threshold, multiplied by exponent_scale(x) before use.
  double tau = kTauFloor;
};

/// Throws DomainError unless 10 <= b_r <= 32.
void check_rounding_bits(int b_r);

/// Nearest b_r-grid value to x (ties to even on the kept mantissa bits).
/// A zero result is always +0.0.
/// Throws DomainError("non-finite value") or
/// DomainError("out of representable range").
double rnd(double x, int b_r);

/// exponent_scale * 2^(9 - b_r): the grid spacing for values of that binade.
double epsilon(int b_r, double exponent_scale);

/// 2^E with 1 <= |x| / 2^E < 2, floored at 2^-126 (also the result for 0).
double exponent_scale(double x);

/// Logging decision for a trainer-side value.
Direction direction(double x, const RoundingParams& params);

struct GridNeighbors {
  double below;  ///< largest grid value <= x
  double above;  ///< smallest grid value >= x
};

GridNeighbors grid_neighbors(double x, int b_r);

/// Auditor-side rounding that follows the trainer's logged decision.
double rev(double x, int b_r, Direction c);

/// True when x is finite and already a b_r-grid value.
bool on_grid(double x, int b_r);

}  // namespace vtrain
