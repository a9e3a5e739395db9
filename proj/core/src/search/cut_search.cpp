#include "nebula/search/cut_search.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <unordered_set>

#include "nebula/core/errors.hpp"
#include "nebula/core/geometry.hpp"
#include "nebula/core/parallel.hpp"

namespace nebula::search {

using scene::kNoNode;
using scene::kTopTree;
using scene::LodNode;
using scene::LodTree;

// ---------------------------------------------------------------------------
// LodView

LodView::LodView(const Camera& camera, const SearchConfig& config)
    : eye_(camera.position()),
      rotation_(camera.rotation),
      focal_(camera.focal),
      near_(camera.near),
      tau_(config.tau_star),
      margin_(config.frustum_margin_px),
      width_(camera.width),
      height_(camera.height),
      principal_(camera.principal) {
  NEBULA_EXPECT(config.tau_star > 0.0, "tau_star must be positive");
  const double f = camera.focal, m = config.frustum_margin_px;
  const double cx = camera.principal.x(), cy = camera.principal.y();
  const std::array<Vec3, 4> cam_normals{Vec3(f, 0.0, cx + m), Vec3(-f, 0.0, camera.width + m - cx),
                                        Vec3(0.0, f, cy + m), Vec3(0.0, -f, camera.height + m - cy)};
  const Mat3 to_world = camera.rotation.transpose();
  for (std::size_t i = 0; i < 4; ++i) side_normals_[i] = to_world * cam_normals[i].normalized();
  forward_ = to_world * Vec3::UnitZ();
}

NodeEval LodView::evaluate(const Vec3& center, double radius) const {
  const Vec3 rel = center - eye_;
  const double dist = rel.norm();

  double vis_margin = forward_.dot(rel) - near_ + radius;
  double worst = vis_margin;
  for (const Vec3& n : side_normals_) {
    const double m = n.dot(rel) + radius;
    vis_margin = std::min(vis_margin, m);
    worst = std::min(worst, m);
  }
  const bool visible = vis_margin >= 0.0;

  NodeEval out;
  const double threshold = focal_ * radius / tau_;
  const bool can_be_big = threshold > near_;
  const double size_slack = can_be_big ? std::abs(dist - radius - threshold) : std::numeric_limits<double>::infinity();
  if (visible) {
    out.size_px = focal_ * radius / std::max(dist - radius, near_);
    out.big = out.size_px > tau_;
  }
  if (!out.big && (!can_be_big || dist - radius >= threshold)) {
    out.cert = {size_slack, 0.0};
  } else if (visible) {
    out.cert = {std::min(size_slack, vis_margin), dist};
  } else {
    out.cert = {-worst, dist};
  }
  return out;
}

bool LodView::compatible(const LodView& o) const {
  return focal_ == o.focal_ && near_ == o.near_ && tau_ == o.tau_ && margin_ == o.margin_ &&
         width_ == o.width_ && height_ == o.height_ && principal_ == o.principal_;
}

double LodView::rotation_bound(const Mat3& anchor_rotation) const {
  // Spectral norm of R - R0: the most any unit vector moves under the relative rotation.
  return 2.0 * std::sin(0.5 * rotation_angle(rotation_, anchor_rotation));
}

CutClass cut_predicate(const LodTree& tree, std::uint32_t node, const LodView& view) {
  const LodNode& v = tree.node(node);
  if (view.too_coarse(v)) return CutClass::too_coarse;
  if (v.is_root() || view.too_coarse(tree.node(v.parent))) return CutClass::selected;
  return CutClass::below_cut;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

struct Range {
  std::uint32_t begin, end;
};

// Regions: partition subtrees 0..S-1, top tree = S.
class Regions {
 public:
  explicit Regions(const LodTree& tree) : tree_(tree), owner_(tree.partition().owner) {
    subtree_count_ = static_cast<std::uint32_t>(tree.partition().subtree_count());
  }
  std::uint32_t of(std::uint32_t node) const {
    if (owner_.empty()) return 0;
    const std::uint32_t o = owner_[node];
    return o == kTopTree ? subtree_count_ : o;
  }
  std::uint32_t root(std::uint32_t region) const {
    return region < subtree_count_ ? tree_.partition().roots[region] : 0u;
  }
  std::uint32_t count() const { return subtree_count_ + 1; }

 private:
  const LodTree& tree_;
  const std::vector<std::uint32_t>& owner_;
  std::uint32_t subtree_count_ = 0;
};

// Regions issued in the same round share an anchor pose, so the rotation
// bound is computed once per distinct anchor.
class CertificateCheck {
 public:
  explicit CertificateCheck(const LodView& view) : view_(view) {}
  bool operator()(const RegionCertificate& rc) {
    if (!have_ || rc.anchor_rotation != anchor_) {
      anchor_ = rc.anchor_rotation;
      turned_ = view_.rotation_bound(anchor_);
      have_ = true;
    }
    const double moved = (view_.eye() - rc.anchor_eye).norm();
    const double guard = 1e-9 * (1.0 + rc.cert.reach + rc.cert.slack);
    return moved + turned_ * rc.cert.reach < rc.cert.slack - guard;
  }

 private:
  const LodView& view_;
  Mat3 anchor_;
  double turned_ = 0.0;
  bool have_ = false;
};

Certificate combine(Certificate a, const Certificate& b) {
  a.slack = std::min(a.slack, b.slack);
  a.reach = std::max(a.reach, b.reach);
  return a;
}

// Fresh certificate for one region's members under the current view.
template <class EvalFn>
Certificate region_certificate(const LodTree& tree, std::span<const std::uint32_t> members, EvalFn&& eval) {
  Certificate c;
  for (std::uint32_t u : members) {
    const LodNode& n = tree.node(u);
    if (!n.is_leaf()) c = combine(c, eval(u).cert);
    if (!n.is_root()) c = combine(c, eval(n.parent).cert);
  }
  return c;
}

// Members grouped by region with a counting sort; regions ascending, members
// keep their input order inside a region.
class RegionGroups {
 public:
  RegionGroups(const Regions& regions, std::span<const std::uint32_t> members) : nodes_(members.size()) {
    std::vector<std::uint32_t> start(regions.count() + 1, 0);
    for (std::uint32_t m : members) ++start[regions.of(m) + 1];
    for (std::size_t r = 1; r < start.size(); ++r) start[r] += start[r - 1];
    std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
    for (std::uint32_t m : members) nodes_[fill[regions.of(m)]++] = m;
    for (std::uint32_t r = 0; r + 1 < start.size(); ++r)
      if (start[r + 1] > start[r])
        groups_.emplace_back(r, std::span<const std::uint32_t>(nodes_.data() + start[r], start[r + 1] - start[r]));
  }
  auto begin() const { return groups_.begin(); }
  auto end() const { return groups_.end(); }

 private:
  std::vector<std::uint32_t> nodes_;
  std::vector<std::pair<std::uint32_t, std::span<const std::uint32_t>>> groups_;
};

Cut make_cut(const LodTree& tree, const Camera& camera, const SearchConfig& config, std::vector<std::uint32_t> members) {
  if (!std::is_sorted(members.begin(), members.end())) std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  Cut cut;
  cut.tree_uid = tree.uid();
  cut.pose = camera;
  cut.config = config;
  cut.members = std::move(members);
  return cut;
}

}  // namespace

// ---------------------------------------------------------------------------
// Full streaming traversal

SearchResult full_cut_search(const LodTree& tree, const Camera& camera, const SearchConfig& config,
                             int worker_count) {
  NEBULA_EXPECT(config.block_size >= 1, "block_size must be >= 1");
  SearchResult result;
  if (tree.size() == 0) return result;
  const LodView view(camera, config);

  std::vector<Range> frontier{{0, 1}};
  std::vector<std::uint32_t> members;
  while (!frontier.empty()) {
    // Coalesce neighbouring child ranges, then cut into blocks.
    std::vector<Range> blocks;
    Range cur = frontier.front();
    auto flush = [&](Range r) {
      for (std::uint32_t b = r.begin; b < r.end; b += static_cast<std::uint32_t>(config.block_size))
        blocks.push_back({b, static_cast<std::uint32_t>(std::min<std::size_t>(r.end, b + config.block_size))});
    };
    for (std::size_t i = 1; i < frontier.size(); ++i) {
      if (frontier[i].begin == cur.end) {
        cur.end = frontier[i].end;
      } else {
        flush(cur);
        cur = frontier[i];
      }
    }
    flush(cur);

    struct BlockOut {
      std::vector<std::uint32_t> selected;
      std::vector<Range> children;
    };
    std::vector<BlockOut> outs(blocks.size());
    parallel_dispatch(blocks.size(), worker_count, [&](std::size_t b, int) {
      BlockOut& out = outs[b];
      for (std::uint32_t i = blocks[b].begin; i < blocks[b].end; ++i) {
        const LodNode& n = tree.node(i);
        if (!n.is_leaf() && view.evaluate(n).big) {
          out.children.push_back({n.first_child, n.first_child + n.child_count});
        } else {
          out.selected.push_back(i);
        }
      }
    });

    frontier.clear();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      result.stats.nodes_visited += blocks[b].end - blocks[b].begin;
      members.insert(members.end(), outs[b].selected.begin(), outs[b].selected.end());
      frontier.insert(frontier.end(), outs[b].children.begin(), outs[b].children.end());
    }
    result.stats.blocks_dispatched += blocks.size();
  }

  result.cut = make_cut(tree, camera, config, std::move(members));
  const Regions regions(tree);
  for (auto& [region, list] : RegionGroups(regions, result.cut.members)) {
    RegionCertificate rc;
    rc.region = region;
    rc.cert = region_certificate(tree, list, [&](std::uint32_t v) { return view.evaluate(tree.node(v)); });
    rc.anchor_eye = view.eye();
    rc.anchor_rotation = view.rotation();
    result.cut.certificates.push_back(rc);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Temporal-aware search

SearchResult temporal_cut_search(const LodTree& tree, const Camera& camera, const Cut& prev,
                                 const SearchConfig& config, int worker_count) {
  NEBULA_EXPECT(prev.tree_uid == tree.uid(), "temporal search: previous cut belongs to a different tree");
  NEBULA_EXPECT(!prev.members.empty(), "temporal search: previous cut is empty");
  NEBULA_EXPECT(prev.members.back() < tree.size(), "temporal search: previous cut references unknown nodes");

  const LodView view(camera, config);
  const LodView prev_view(prev.pose, prev.config);
  const bool certs_usable = view.compatible(prev_view);
  const Regions regions(tree);

  enum : std::uint8_t { kUnseeded = 0, kCertified = 1, kPending = 2 };
  std::vector<std::uint8_t> seed_state(regions.count(), kUnseeded);
  std::vector<std::uint8_t> done(regions.count(), 0);

  SearchResult result;
  std::vector<std::uint32_t> members;
  std::vector<RegionCertificate> kept;

  struct Item {
    std::uint32_t region;
    bool context_known;  // parent of the region root is known to be too coarse
  };
  std::vector<Item> work;

  // Seed every region that owns a previous member, in ascending order.
  std::vector<std::uint32_t> seeded;
  for (std::uint32_t m : prev.members) {
    const std::uint32_t r = regions.of(m);
    if (seed_state[r] == kUnseeded) {
      seed_state[r] = kPending;
      seeded.push_back(r);
    }
  }
  std::sort(seeded.begin(), seeded.end());
  CertificateCheck certified(view);
  auto cert_it = prev.certificates.begin();
  for (std::uint32_t region : seeded) {
    const RegionCertificate* rc = nullptr;
    if (certs_usable) {
      cert_it = std::lower_bound(cert_it, prev.certificates.end(), region,
                                 [](const RegionCertificate& c, std::uint32_t r) { return c.region < r; });
      if (cert_it != prev.certificates.end() && cert_it->region == region) rc = &*cert_it;
    }
    if (rc && certified(*rc)) {
      seed_state[region] = kCertified;
      kept.push_back(*rc);
    } else {
      work.push_back({region, false});
    }
  }
  // Certified members in previous-cut order stay sorted.
  std::vector<std::uint32_t> certified_members;
  for (std::uint32_t m : prev.members)
    if (seed_state[regions.of(m)] == kCertified) certified_members.push_back(m);

  std::unordered_set<std::uint32_t> visited;
  std::vector<std::uint8_t> searched(regions.count(), 0);

  while (!work.empty()) {
    struct ItemOut {
      std::vector<std::uint32_t> selected;
      std::vector<std::uint32_t> visited;
      std::vector<Item> emitted;
      bool searched = false;
    };
    std::vector<ItemOut> outs(work.size());
    parallel_dispatch(work.size(), worker_count, [&](std::size_t k, int) {
      const Item item = work[k];
      ItemOut& out = outs[k];
      const std::uint32_t root = regions.root(item.region);
      if (!item.context_known && root != 0) {
        const std::uint32_t parent = tree.node(root).parent;
        out.visited.push_back(parent);
        if (!view.evaluate(tree.node(parent)).big) {
          // Frontier moved above this region.
          out.emitted.push_back({regions.of(parent), false});
          return;
        }
      }
      out.searched = true;
      std::vector<std::uint32_t> stack{root};
      while (!stack.empty()) {
        const std::uint32_t v = stack.back();
        stack.pop_back();
        const LodNode& n = tree.node(v);
        out.visited.push_back(v);
        if (n.is_leaf() || !view.evaluate(n).big) {
          out.selected.push_back(v);
          continue;
        }
        for (std::uint32_t c = n.first_child + n.child_count; c-- > n.first_child;) {
          const std::uint32_t q = regions.of(c);
          if (q == item.region) {
            stack.push_back(c);
          } else if (seed_state[q] == kUnseeded) {
            // Frontier moved below this region into one nobody seeded.
            out.emitted.push_back({q, true});
          }
          // Seeded child regions cover themselves: certified ones keep their
          // members, pending ones are already queued.
        }
      }
    });

    std::vector<Item> next;
    for (std::size_t k = 0; k < work.size(); ++k) {
      ItemOut& out = outs[k];
      done[work[k].region] = 1;
      if (out.searched) {
        searched[work[k].region] = 1;
        ++result.stats.subtrees_searched;
      }
      if (seed_state[work[k].region] != kPending) ++result.stats.escalations;
      visited.insert(out.visited.begin(), out.visited.end());
      members.insert(members.end(), out.selected.begin(), out.selected.end());
      for (const Item& e : out.emitted) next.push_back(e);
    }
    // Deduplicate next round; a region is processed at most once per search.
    std::sort(next.begin(), next.end(), [](const Item& a, const Item& b) {
      return a.region != b.region ? a.region < b.region : a.context_known > b.context_known;
    });
    work.clear();
    for (const Item& e : next) {
      if (done[e.region] || (!work.empty() && work.back().region == e.region)) continue;
      work.push_back(e);
    }
  }

  std::sort(members.begin(), members.end());
  std::vector<std::uint32_t> merged;
  merged.reserve(members.size() + certified_members.size());
  std::set_union(certified_members.begin(), certified_members.end(), members.begin(), members.end(),
                 std::back_inserter(merged));
  result.cut = make_cut(tree, camera, config, std::move(merged));

  // Certificates: untouched certified regions keep theirs, the rest are reissued.
  auto eval_counted = [&](std::uint32_t v) {
    visited.insert(v);
    return view.evaluate(tree.node(v));
  };
  std::size_t kept_pos = 0;
  for (auto& [region, list] : RegionGroups(regions, result.cut.members)) {
    while (kept_pos < kept.size() && kept[kept_pos].region < region) ++kept_pos;
    if (!searched[region] && kept_pos < kept.size() && kept[kept_pos].region == region) {
      result.cut.certificates.push_back(kept[kept_pos]);
      continue;
    }
    RegionCertificate rc;
    rc.region = region;
    rc.cert = region_certificate(tree, list, eval_counted);
    rc.anchor_eye = view.eye();
    rc.anchor_rotation = view.rotation();
    result.cut.certificates.push_back(rc);
  }
  result.stats.nodes_visited = visited.size();
  return result;
}

// ---------------------------------------------------------------------------
// Reference and validation

Cut reference_cut_search(const LodTree& tree, const Camera& camera, const SearchConfig& config) {
  const LodView view(camera, config);
  std::vector<std::uint32_t> members;
  auto visit = [&](auto&& self, std::uint32_t v) -> void {
    const LodNode& n = tree.node(v);
    if (view.too_coarse(n)) {
      for (std::uint32_t c = n.first_child; c < n.first_child + n.child_count; ++c) self(self, c);
    } else {
      members.push_back(v);
    }
  };
  if (tree.size() > 0) visit(visit, 0);
  return make_cut(tree, camera, config, std::move(members));
}

bool validate_cut(const LodTree& tree, const Cut& cut) {
  const std::size_t n = tree.size();
  std::vector<std::uint8_t> depth(n, 0);
  for (std::uint32_t m : cut.members) {
    if (m >= n || depth[m]) return false;
    depth[m] = 1;
  }
  for (std::uint32_t i = 1; i < n; ++i) {
    const std::uint32_t above = depth[tree.node(i).parent];
    if (above + depth[i] > 1) return false;
    depth[i] = static_cast<std::uint8_t>(above + depth[i]);
  }
  for (std::uint32_t i = 0; i < n; ++i)
    if (tree.node(i).is_leaf() && depth[i] != 1) return false;
  return true;
}

}  // namespace nebula::search
