#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "nebula/core/types.hpp"
#include "nebula/scene/lod_tree.hpp"

namespace nebula::search {

struct SearchConfig {
  double tau_star = 4.0;
  // Screen-rectangle extension used for the LoD visibility test.
  double frustum_margin_px = 32.0;
  // Maximum nodes per dispatched block in the streaming traversal.
  std::size_t block_size = 4096;
};

enum class CutClass { too_coarse, selected, below_cut };

// Proof that a node's coarse/fine status survives camera motion: the status
// is unchanged while  translation + rotation_bound * reach < slack.
struct Certificate {
  double slack = std::numeric_limits<double>::infinity();
  double reach = 0.0;
};

struct NodeEval {
  double size_px = 0.0;  // 0 when the node's bounding sphere is outside the view
  bool big = false;      // size_px > tau_star
  Certificate cert;
};

// Camera quantities needed by the LoD test, precomputed once per search.
//
// A node is measured through its bounding sphere (position, extent). It is
// invisible (size 0) when the sphere lies fully outside one plane of the
// margin-expanded frustum or behind the near plane. Otherwise
//   size_px = focal * extent / max(|position - eye| - extent, near).
// Nested extent spheres make size monotone from child to parent under any
// camera, which is what lets a single parent check stand for all ancestors.
class LodView {
 public:
  LodView(const Camera& camera, const SearchConfig& config);

  NodeEval evaluate(const scene::LodNode& node) const { return evaluate(node.gaussian.position, node.extent); }
  NodeEval evaluate(const Vec3& center, double extent) const;
  double projected_size(const scene::LodNode& node) const { return evaluate(node).size_px; }
  bool too_coarse(const scene::LodNode& node) const { return !node.is_leaf() && evaluate(node).big; }

  const Vec3& eye() const { return eye_; }
  const Mat3& rotation() const { return rotation_; }
  // Same intrinsics, threshold and margin: certificates transfer between views.
  bool compatible(const LodView& other) const;
  // Upper bounds on how far plane normals and the eye moved between two views.
  double rotation_bound(const Mat3& anchor_rotation) const;

 private:
  Vec3 eye_;
  Mat3 rotation_;
  Vec3 forward_;
  std::array<Vec3, 4> side_normals_;
  double focal_, near_, tau_;
  double margin_;
  int width_, height_;
  Vec2 principal_;
};

CutClass cut_predicate(const scene::LodTree& tree, std::uint32_t node, const LodView& view);

struct RegionCertificate {
  std::uint32_t region = 0;
  Certificate cert;
  Vec3 anchor_eye = Vec3::Zero();
  Mat3 anchor_rotation = Mat3::Identity();
};

struct Cut {
  std::uint64_t tree_uid = 0;
  std::uint64_t frame = 0;
  Camera pose;
  std::vector<std::uint32_t> members;  // ascending node indices
  // Per-region certificates (sorted by region) that let the next temporal
  // search skip regions whose frontier provably did not move. May be empty.
  std::vector<RegionCertificate> certificates;
  // The view parameters the certificates were issued under.
  SearchConfig config;

  bool same_members(const Cut& other) const { return members == other.members; }
};

struct SearchStats {
  std::uint64_t nodes_visited = 0;
  std::uint64_t blocks_dispatched = 0;
  std::uint64_t subtrees_searched = 0;
  std::uint64_t escalations = 0;
};

struct SearchResult {
  Cut cut;
  SearchStats stats;
};

// Level-by-level streaming traversal over the level-order array. Only
// children of too-coarse nodes are examined; work is cut into blocks of at
// most config.block_size consecutive nodes that idle workers pick up.
SearchResult full_cut_search(const scene::LodTree& tree, const Camera& camera, const SearchConfig& config,
                             int worker_count = 1);

// Incremental search from the previous frame's cut. Regions (partition
// subtrees plus the top tree) owning a previous member are revisited unless
// their certificate shows nothing changed; a region whose frontier leaves it
// escalates into the parent region or into child regions. The returned cut
// has exactly the members full_cut_search would produce.
SearchResult temporal_cut_search(const scene::LodTree& tree, const Camera& camera, const Cut& prev,
                                 const SearchConfig& config, int worker_count = 1);

// Plain recursive depth-first traversal; the reference the other two must match.
Cut reference_cut_search(const scene::LodTree& tree, const Camera& camera, const SearchConfig& config);

// True iff every root-to-leaf path contains exactly one member.
bool validate_cut(const scene::LodTree& tree, const Cut& cut);

}  // namespace nebula::search
