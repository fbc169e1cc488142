#include "vtrain/merkle.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "vtrain/error.hpp"

namespace vtrain {
namespace {

constexpr char kTreeMagic[4] = {'V', 'T', 'M', 'T'};
constexpr std::uint8_t kTreeVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(weights.parameter_count() * 4);
  for (std::size_t t = 0; t < weights.tensors.size(); ++t) {
    const auto& data = weights.tensors[t].data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw DomainError("non-finite weight in tensor " + std::to_string(t) + " at index " + std::to_string(i));
      }
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data[i]));
      for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  }
  return bytes;
}

Digest hash_weights(const ModelWeights& weights, int b_m) {
  if (b_m != 32) throw DomainError("only FP32 target precision (b_m = 32) is supported");
  return sha256(serialize_weights(weights));
}

Digest MerklePath::compute_root() const {
  Digest acc = leaf;
  for (const auto& step : siblings) {
    acc = step.side == Side::Left ? sha256_pair(step.sibling, acc) : sha256_pair(acc, step.sibling);
  }
  return acc;
}

bool verify_path(const MerklePath& path, const Digest& root) { return path.compute_root() == root; }

std::vector<Side> expected_path_shape(std::size_t leaf_index, std::size_t leaf_count) {
  std::vector<Side> shape;
  std::size_t idx = leaf_index;
  std::size_t size = leaf_count;
  while (size > 1) {
    if (idx % 2 == 1) {
      shape.push_back(Side::Left);
    } else if (idx + 1 < size) {
      shape.push_back(Side::Right);
    }
    idx /= 2;
    size = (size + 1) / 2;
  }
  return shape;
}

MerkleTree MerkleTree::build(std::vector<Digest> leaves) {
  if (leaves.empty()) throw DomainError("cannot build a Merkle tree without leaves");
  MerkleTree tree;
  tree.levels_.push_back(std::move(leaves));
  while (tree.levels_.back().size() > 1) {
    const auto& below = tree.levels_.back();
    std::vector<Digest> above;
    above.reserve((below.size() + 1) / 2);
    for (std::size_t i = 0; i < below.size(); i += 2) {
      above.push_back(i + 1 < below.size() ? sha256_pair(below[i], below[i + 1]) : below[i]);
    }
    tree.levels_.push_back(std::move(above));
  }
  return tree;
}

std::size_t MerkleTree::level_size(std::size_t level) const {
  if (level >= levels_.size()) throw DomainError("tree level " + std::to_string(level) + " out of range");
  return levels_[level].size();
}

const Digest& MerkleTree::node(std::size_t level, std::size_t index) const {
  if (level >= levels_.size() || index >= levels_[level].size()) {
    throw DomainError("tree node (" + std::to_string(level) + ", " + std::to_string(index) + ") out of range");
  }
  return levels_[level][index];
}

MerklePath MerkleTree::path(std::size_t leaf_index) const {
  if (leaf_index >= leaf_count()) throw DomainError("leaf index " + std::to_string(leaf_index) + " out of range");
  MerklePath p{leaf_index, levels_[0][leaf_index], {}};
  std::size_t idx = leaf_index;
  for (std::size_t level = 0; level + 1 < levels_.size(); ++level) {
    const auto& nodes = levels_[level];
    if (idx % 2 == 1) {
      p.siblings.push_back({nodes[idx - 1], Side::Left});
    } else if (idx + 1 < nodes.size()) {
      p.siblings.push_back({nodes[idx + 1], Side::Right});
    }
    idx /= 2;
  }
  return p;
}

void MerkleTree::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(kTreeMagic, 4);
  out.put(static_cast<char>(kTreeVersion));
  std::uint8_t count[8];
  const std::uint64_t n = leaf_count();
  for (int i = 0; i < 8; ++i) count[i] = static_cast<std::uint8_t>(n >> (8 * i));
  out.write(reinterpret_cast<const char*>(count), 8);
  for (const auto& leaf : leaves()) out.write(reinterpret_cast<const char*>(leaf.data()), 32);
  if (!out) throw IoError("write failed: " + file.string());
}

MerkleTree MerkleTree::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kTreeMagic, 4) != 0) {
    throw FormatError("not a checkpoint tree file: " + file.string());
  }
  const int version = in.get();
  if (version != kTreeVersion) throw FormatError("unsupported tree file version: " + file.string());
  std::uint8_t count[8] = {};
  in.read(reinterpret_cast<char*>(count), 8);
  if (in.gcount() != 8) throw FormatError("truncated tree file: " + file.string());
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= std::uint64_t{count[i]} << (8 * i);
  const auto expected = 13 + 32 * n;
  if (n == 0 || std::filesystem::file_size(file) != expected) {
    throw FormatError("tree file size does not match leaf count: " + file.string());
  }
  std::vector<Digest> leaves(n);
  for (auto& leaf : leaves) in.read(reinterpret_cast<char*>(leaf.data()), 32);
  if (!in) throw FormatError("truncated tree file: " + file.string());
  return build(std::move(leaves));
}

DivergenceResult first_divergence(const MerkleTree& a, const MerkleTree& b) {
  if (a.leaf_count() != b.leaf_count()) throw ProtocolError("checkpoint schedule mismatch");
  DivergenceResult result;
  if (a.root() == b.root()) return result;

  std::size_t level = a.height() - 1;
  std::size_t idx = 0;
  while (level > 0) {
    --level;
    const std::size_t left = 2 * idx;
    ++result.comparisons;
    if (a.node(level, left) != b.node(level, left)) {
      idx = left;
      continue;
    }
    // A matching left child under a mismatching parent means the right child
    // exists and differs.
    const std::size_t right = left + 1;
    if (right >= a.level_size(level)) throw Error("inconsistent Merkle tree");
    ++result.comparisons;
    if (a.node(level, right) == b.node(level, right)) throw Error("inconsistent Merkle tree");
    idx = right;
  }
  result.leaf = idx;
  return result;
}

std::size_t descent_query_bound(std::size_t leaf_count) {
  std::size_t depth = 0;
  while ((std::size_t{1} << depth) < leaf_count) ++depth;
  return 2 * depth + 2;
}

}  // namespace vtrain
