#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nebula/core/types.hpp"

namespace nebula::scene {

inline constexpr std::uint32_t kNoNode = 0xFFFFFFFFu;
inline constexpr std::uint32_t kTopTree = 0xFFFFFFFFu;

struct LodNode {
  Gaussian gaussian;
  std::uint32_t parent = kNoNode;
  std::uint32_t first_child = kNoNode;
  std::uint32_t child_count = 0;
  std::uint32_t subtree_id = kTopTree;
  std::uint32_t level = 0;
  // Radius of a sphere around gaussian.position that contains this node's
  // 3-sigma ellipsoid and the extent spheres of all its children.
  double extent = 0.0;

  bool is_leaf() const { return child_count == 0; }
  bool is_root() const { return parent == kNoNode; }
};

class LodTree;

// Disjoint, connected regions of the tree. Each subtree is rooted at one node
// and contains that node plus descendants down to (but excluding) the roots
// of other subtrees. Whatever remains above all subtree roots is the top tree.
struct SubtreePartition {
  std::size_t target_size = 0;
  std::vector<std::uint32_t> roots;                  // per subtree
  std::vector<std::vector<std::uint32_t>> members;   // per subtree, ascending
  std::vector<std::uint32_t> top_tree;               // ascending
  std::vector<std::uint32_t> owner;                  // per node; kTopTree for the top tree

  std::size_t subtree_count() const { return roots.size(); }
  std::size_t max_subtree_size() const;
  bool empty() const { return roots.empty() && top_tree.empty(); }

  // Rebuilds member lists from a per-node owner array.
  static SubtreePartition from_owner(const LodTree& tree, std::vector<std::uint32_t> owner,
                                     std::size_t target_size);
  // Disjointness, full coverage, single-root connectivity. Throws DataError.
  void check(const LodTree& tree) const;
};

class LodTree {
 public:
  LodTree() = default;
  // Takes nodes already in level order; computes level offsets and the uid.
  // Throws DataError if the level-order invariants do not hold.
  explicit LodTree(std::vector<LodNode> nodes);

  std::span<const LodNode> nodes() const { return nodes_; }
  const LodNode& node(std::uint32_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t level_count() const { return level_offsets_.empty() ? 0 : level_offsets_.size() - 1; }
  // level_count()+1 entries; the last is the end sentinel.
  std::span<const std::uint32_t> level_offsets() const { return level_offsets_; }
  const SubtreePartition& partition() const { return partition_; }
  // Content hash; identifies the tree in cuts and wire messages.
  std::uint64_t uid() const { return uid_; }
  int sh_degree() const { return nodes_.empty() ? 0 : nodes_.front().gaussian.sh_degree(); }

  void set_partition(SubtreePartition partition);

  // Level-order and parent/child invariants. Throws DataError.
  void check() const;
  // True iff every parent's extent sphere contains each child's.
  bool extents_nested() const;
  // Grows extents bottom-up until nested. Returns the number of nodes changed.
  std::size_t repair_extents();

 private:
  void finalize();

  std::vector<LodNode> nodes_;
  std::vector<std::uint32_t> level_offsets_;
  SubtreePartition partition_;
  std::uint64_t uid_ = 0;
};

// Agglomerative octree-guided builder. Leaves are the input Gaussians (ids
// kept); interior nodes are moment-matched merges with weight opacity*volume
// and get ids after the largest input id. `bucket` bounds the number of
// leaves gathered directly under one parent.
LodTree build_lod_tree(std::vector<Gaussian> gaussians, int bucket = 8);

// Moment-matched merge of a group of Gaussians (used by the builder).
Gaussian merge_gaussians(std::span<const Gaussian> group, std::uint32_t id);

// Greedy bottom-up grouping into connected regions of at most 2*target nodes.
SubtreePartition partition_subtrees(const LodTree& tree, std::size_t target_size);

// Re-indexes an arbitrary parent-linked node array into level order: sorted
// by (level, parent order), children contiguous. Only `parent` is read from
// the input; child links, levels and offsets are recomputed. Throws DataError
// on cycles or when there is not exactly one root.
LodTree level_order_layout(std::vector<LodNode> nodes);

// "NLOD" container: magic, u32 version, u64 node count, then fixed 512-byte
// little-endian records in level order. See docs/formats.md.
std::vector<std::uint8_t> encode_nlod(const LodTree& tree);
LodTree decode_nlod(std::span<const std::uint8_t> bytes);
void save_nlod(const std::string& path, const LodTree& tree);
LodTree load_nlod(const std::string& path);

inline constexpr std::uint32_t kNlodVersion = 1;
inline constexpr std::size_t kNlodRecordSize = 512;

}  // namespace nebula::scene
