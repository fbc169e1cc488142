#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vtrain {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);

/// SHA-256 of left || right.
Digest sha256_pair(const Digest& left, const Digest& right);

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  Digest finish();

 private:
  void* ctx_;
};

/// Lowercase hex, 64 characters.
std::string to_hex(const Digest& d);

/// Parses 64 hex characters (either case); throws FormatError otherwise.
Digest digest_from_hex(std::string_view hex);

}  // namespace vtrain
