#pragma once

// SHA-256 Merkle tree over checkpoint digests.
//
// Level 0 holds the leaves; each level above pairs nodes left to right and
// hashes left || right. A trailing unpaired node is promoted unchanged.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "vtrain/digest.hpp"
#include "vtrain/simnet.hpp"

namespace vtrain {

/// Canonical checkpoint bytes: every tensor in order, row-major, each element
/// cast to FP32 (round to nearest even) as 4 little-endian bytes.
/// Throws DomainError naming tensor and index for non-finite elements.
std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);

/// SHA-256 of serialize_weights(). b_m must be 32.
Digest hash_weights(const ModelWeights& weights, int b_m = 32);

enum class Side : std::uint8_t { Left, Right };

struct PathStep {
  Digest sibling;
  Side side;  ///< position of the sibling relative to the running hash
  friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct MerklePath {
  std::size_t leaf_index = 0;
  Digest leaf{};
  std::vector<PathStep> siblings;  ///< leaf to root

  Digest compute_root() const;
  friend bool operator==(const MerklePath&, const MerklePath&) = default;
};

bool verify_path(const MerklePath& path, const Digest& root);

/// Sibling sides a well-formed path for `leaf_index` must have in a tree with
/// `leaf_count` leaves (levels with a promoted node contribute no step).
std::vector<Side> expected_path_shape(std::size_t leaf_index, std::size_t leaf_count);

class MerkleTree {
 public:
  /// Throws DomainError for an empty leaf list.
  static MerkleTree build(std::vector<Digest> leaves);

  const Digest& root() const { return levels_.back().front(); }
  std::size_t leaf_count() const { return levels_.front().size(); }
  /// Number of levels including leaves and root.
  std::size_t height() const { return levels_.size(); }
  std::size_t level_size(std::size_t level) const;
  const std::vector<Digest>& leaves() const { return levels_.front(); }

  /// Throws DomainError for out-of-range coordinates.
  const Digest& node(std::size_t level, std::size_t index) const;
  MerklePath path(std::size_t leaf_index) const;

  void save(const std::filesystem::path& file) const;
  static MerkleTree load(const std::filesystem::path& file);

 private:
  std::vector<std::vector<Digest>> levels_;
};

struct DivergenceResult {
  std::optional<std::size_t> leaf;
  std::size_t comparisons = 0;  ///< node comparisons below the root
};

/// Leftmost differing leaf found by descending only into mismatching
/// subtrees. Throws ProtocolError("checkpoint schedule mismatch") when the
/// leaf counts differ.
DivergenceResult first_divergence(const MerkleTree& a, const MerkleTree& b);

/// 2 * ceil(log2 n) + 2.
std::size_t descent_query_bound(std::size_t leaf_count);

}  // namespace vtrain
