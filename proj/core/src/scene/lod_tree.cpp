#include "nebula/scene/lod_tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "nebula/core/binary_io.hpp"
#include "nebula/core/errors.hpp"

namespace nebula::scene {
namespace {

void put_record(ByteWriter& w, const LodNode& n, bool with_subtree) {
  const Gaussian& g = n.gaussian;
  w.u32(g.id);
  w.u32(n.parent);
  w.u32(n.first_child);
  w.u32(n.child_count);
  w.u32(with_subtree ? n.subtree_id : kTopTree);
  w.u32(n.level);
  w.u32(static_cast<std::uint32_t>(g.sh_degree()));
  w.u32(0);
  for (int k = 0; k < 3; ++k) w.f64(g.position[k]);
  for (int k = 0; k < 3; ++k) w.f64(g.scale[k]);
  w.f64(g.rotation.w());
  w.f64(g.rotation.x());
  w.f64(g.rotation.y());
  w.f64(g.rotation.z());
  w.f64(g.opacity);
  w.f64(n.extent);
  for (int k = 0; k < sh_coeff_count(kMaxShDegree); ++k) {
    const Vec3 c = k < static_cast<int>(g.sh.size()) ? g.sh[k] : Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) w.f64(c[ch]);
  }
}

LodNode get_record(ByteReader& r) {
  LodNode n;
  Gaussian& g = n.gaussian;
  g.id = r.u32();
  n.parent = r.u32();
  n.first_child = r.u32();
  n.child_count = r.u32();
  n.subtree_id = r.u32();
  n.level = r.u32();
  const std::uint32_t degree = r.u32();
  (void)r.u32();
  if (degree > kMaxShDegree) throw FormatError("NLOD record: SH degree " + std::to_string(degree));
  for (int k = 0; k < 3; ++k) g.position[k] = r.f64();
  for (int k = 0; k < 3; ++k) g.scale[k] = r.f64();
  const double qw = r.f64(), qx = r.f64(), qy = r.f64(), qz = r.f64();
  g.rotation = Quat(qw, qx, qy, qz);
  g.opacity = r.f64();
  n.extent = r.f64();
  g.sh.assign(sh_coeff_count(static_cast<int>(degree)), Vec3::Zero());
  for (int k = 0; k < sh_coeff_count(kMaxShDegree); ++k) {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) c[ch] = r.f64();
    if (k < static_cast<int>(g.sh.size())) g.sh[k] = c;
  }
  return n;
}


double own_extent(const Gaussian& g) { return 3.0 * g.max_scale(); }

}  // namespace

// ---------------------------------------------------------------------------
// LodTree

LodTree::LodTree(std::vector<LodNode> nodes) : nodes_(std::move(nodes)) { finalize(); }

void LodTree::finalize() {
  level_offsets_.clear();
  if (!nodes_.empty()) {
    const std::uint32_t levels = nodes_.back().level + 1;
    level_offsets_.assign(levels + 1, 0);
    std::uint32_t cur = 0;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      const std::uint32_t lv = nodes_[i].level;
      if (lv < cur || lv >= levels) throw DataError("LodTree: nodes are not in level order");
      while (cur < lv) level_offsets_[++cur] = i;
    }
    level_offsets_[levels] = static_cast<std::uint32_t>(nodes_.size());
  }
  check();
  ByteWriter w;
  w.reserve(8 + nodes_.size() * kNlodRecordSize);
  w.u64(nodes_.size());
  for (const LodNode& n : nodes_) put_record(w, n, false);
  uid_ = fnv1a(w.data());
  // Partition travels with the nodes' subtree_id fields.
  bool any = false;
  for (const LodNode& n : nodes_) any |= n.subtree_id != kTopTree;
  if (any) {
    std::vector<std::uint32_t> owner(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) owner[i] = nodes_[i].subtree_id;
    partition_ = SubtreePartition::from_owner(*this, std::move(owner), 0);
  } else {
    partition_ = {};
  }
}

void LodTree::check() const {
  if (nodes_.empty()) return;
  const auto n = static_cast<std::uint32_t>(nodes_.size());
  if (!nodes_[0].is_root() || nodes_[0].level != 0) throw DataError("LodTree: node 0 must be the root");
  std::uint64_t child_total = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const LodNode& v = nodes_[i];
    if (i > 0) {
      if (v.parent == kNoNode) throw DataError("LodTree: more than one root");
      if (v.parent >= i) throw DataError("LodTree: parent index not smaller than child at " + std::to_string(i));
      if (nodes_[v.parent].level + 1 != v.level) throw DataError("LodTree: level mismatch at " + std::to_string(i));
      if (v.parent < nodes_[i - 1].parent && i > 1) throw DataError("LodTree: children not grouped by parent order");
    }
    if (v.child_count > 0) {
      if (v.first_child >= n || v.first_child + v.child_count > n)
        throw DataError("LodTree: child range out of bounds at " + std::to_string(i));
      for (std::uint32_t c = v.first_child; c < v.first_child + v.child_count; ++c)
        if (nodes_[c].parent != i) throw DataError("LodTree: children not contiguous at " + std::to_string(i));
    }
    child_total += v.child_count;
  }
  if (child_total != n - 1) throw DataError("LodTree: child counts do not sum to node count - 1");
  for (std::size_t l = 0; l + 1 < level_offsets_.size(); ++l)
    if (level_offsets_[l] >= level_offsets_[l + 1]) throw DataError("LodTree: empty level");
}

bool LodTree::extents_nested() const {
  for (std::uint32_t i = 1; i < nodes_.size(); ++i) {
    const LodNode& c = nodes_[i];
    const LodNode& p = nodes_[c.parent];
    if ((c.gaussian.position - p.gaussian.position).norm() + c.extent > p.extent) return false;
  }
  return true;
}

std::size_t LodTree::repair_extents() {
  std::size_t changed = 0;
  for (std::size_t i = nodes_.size(); i-- > 1;) {
    const LodNode& c = nodes_[i];
    LodNode& p = nodes_[c.parent];
    const double need = (c.gaussian.position - p.gaussian.position).norm() + c.extent;
    if (need > p.extent) {
      p.extent = std::nextafter(need, INFINITY);
      ++changed;
    }
  }
  if (changed) finalize();
  return changed;
}

void LodTree::set_partition(SubtreePartition partition) {
  partition.check(*this);
  for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].subtree_id = partition.owner[i];
  partition_ = std::move(partition);
}

// ---------------------------------------------------------------------------
// SubtreePartition

std::size_t SubtreePartition::max_subtree_size() const {
  std::size_t m = 0;
  for (const auto& s : members) m = std::max(m, s.size());
  return m;
}

SubtreePartition SubtreePartition::from_owner(const LodTree& tree, std::vector<std::uint32_t> owner,
                                              std::size_t target_size) {
  if (owner.size() != tree.size()) throw DataError("partition: owner array size mismatch");
  SubtreePartition p;
  p.target_size = target_size;
  std::uint32_t count = 0;
  for (std::uint32_t o : owner)
    if (o != kTopTree) count = std::max(count, o + 1);
  p.roots.assign(count, kNoNode);
  p.members.assign(count, {});
  for (std::uint32_t i = 0; i < owner.size(); ++i) {
    const std::uint32_t o = owner[i];
    if (o == kTopTree) {
      p.top_tree.push_back(i);
      continue;
    }
    p.members[o].push_back(i);
    const std::uint32_t parent = tree.node(i).parent;
    if (parent == kNoNode || owner[parent] != o) {
      if (p.roots[o] != kNoNode) throw DataError("partition: subtree " + std::to_string(o) + " has two roots");
      p.roots[o] = i;
    }
  }
  p.owner = std::move(owner);
  p.check(tree);
  return p;
}

void SubtreePartition::check(const LodTree& tree) const {
  if (owner.size() != tree.size()) throw DataError("partition: owner array size mismatch");
  std::size_t covered = top_tree.size();
  for (std::size_t s = 0; s < roots.size(); ++s) {
    if (members[s].empty() || roots[s] == kNoNode) throw DataError("partition: empty subtree " + std::to_string(s));
    covered += members[s].size();
    for (std::uint32_t v : members[s]) {
      if (owner[v] != s) throw DataError("partition: owner disagrees with member list");
      const std::uint32_t parent = tree.node(v).parent;
      const bool inside = parent != kNoNode && owner[parent] == s;
      if (!inside && v != roots[s]) throw DataError("partition: subtree " + std::to_string(s) + " is not connected");
    }
    if (target_size > 0 && members[s].size() > 2 * target_size)
      throw DataError("partition: subtree " + std::to_string(s) + " exceeds 2x target size");
  }
  for (std::uint32_t v : top_tree) {
    if (owner[v] != kTopTree) throw DataError("partition: owner disagrees with top tree");
    const std::uint32_t parent = tree.node(v).parent;
    if (parent != kNoNode && owner[parent] != kTopTree) throw DataError("partition: top tree is not connected");
  }
  if (covered != tree.size()) throw DataError("partition: nodes not covered exactly once");
}

SubtreePartition partition_subtrees(const LodTree& tree, std::size_t target_size) {
  NEBULA_EXPECT(target_size >= 1, "partition target size must be >= 1");
  const std::size_t n = tree.size();
  std::vector<std::size_t> pending(n, 0);
  std::vector<char> closed(n, 0);
  std::vector<std::uint32_t> open_children;
  for (std::size_t i = n; i-- > 0;) {
    const LodNode& v = tree.node(static_cast<std::uint32_t>(i));
    std::size_t sum = 1;
    open_children.clear();
    for (std::uint32_t c = v.first_child; c < v.first_child + v.child_count; ++c) {
      if (!closed[c]) {
        sum += pending[c];
        open_children.push_back(c);
      }
    }
    if (sum > 2 * target_size) {
      std::sort(open_children.begin(), open_children.end(), [&](std::uint32_t a, std::uint32_t b) {
        return pending[a] != pending[b] ? pending[a] > pending[b] : a < b;
      });
      for (std::uint32_t c : open_children) {
        if (sum <= 2 * target_size) break;
        closed[c] = 1;
        sum -= pending[c];
      }
    }
    pending[i] = sum;
    if (sum >= target_size) closed[i] = 1;
  }
  std::vector<std::uint32_t> owner(n, kTopTree);
  std::uint32_t next = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (closed[i]) {
      owner[i] = next++;
    } else if (i > 0) {
      owner[i] = owner[tree.node(i).parent];
    }
  }
  return SubtreePartition::from_owner(tree, std::move(owner), target_size);
}

// ---------------------------------------------------------------------------
// Layout

LodTree level_order_layout(std::vector<LodNode> nodes) {
  const auto n = static_cast<std::uint32_t>(nodes.size());
  if (n == 0) return LodTree{};
  std::uint32_t root = kNoNode;
  std::vector<std::vector<std::uint32_t>> children(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t p = nodes[i].parent;
    if (p == kNoNode) {
      if (root != kNoNode) throw DataError("layout: more than one root");
      root = i;
    } else {
      if (p >= n || p == i) throw DataError("layout: invalid parent index at node " + std::to_string(i));
      children[p].push_back(i);
    }
  }
  if (root == kNoNode) throw DataError("layout: cycle detected (no root)");

  std::vector<std::uint32_t> order;
  order.reserve(n);
  order.push_back(root);
  for (std::size_t head = 0; head < order.size(); ++head)
    for (std::uint32_t c : children[order[head]]) order.push_back(c);
  if (order.size() != n) throw DataError("layout: cycle detected (unreachable nodes)");

  std::vector<std::uint32_t> new_index(n);
  for (std::uint32_t i = 0; i < n; ++i) new_index[order[i]] = i;

  std::vector<LodNode> out(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t old = order[i];
    LodNode v = std::move(nodes[old]);
    v.parent = v.parent == kNoNode ? kNoNode : new_index[v.parent];
    v.level = v.parent == kNoNode ? 0 : out[v.parent].level + 1;
    v.child_count = static_cast<std::uint32_t>(children[old].size());
    v.first_child = v.child_count ? new_index[children[old].front()] : kNoNode;
    out[i] = std::move(v);
  }
  return LodTree(std::move(out));
}

// ---------------------------------------------------------------------------
// Builder

Gaussian merge_gaussians(std::span<const Gaussian> group, std::uint32_t id) {
  NEBULA_EXPECT(!group.empty(), "merge_gaussians: empty group");
  std::vector<double> w(group.size());
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Gaussian& g = group[i];
    w[i] = g.opacity * g.scale.x() * g.scale.y() * g.scale.z();
    total += w[i];
  }
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(group.size());
  }

  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 0; i < group.size(); ++i) mean += w[i] * group[i].position;
  mean /= total;

  Mat3 second = Mat3::Zero();
  double opacity = 0.0;
  const std::size_t sh_count = group.front().sh.size();
  std::vector<Vec3> sh(sh_count, Vec3::Zero());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Gaussian& g = group[i];
    NEBULA_EXPECT(g.sh.size() == sh_count, "merge_gaussians: mixed SH degrees");
    second += w[i] * (g.covariance() + g.position * g.position.transpose());
    opacity += w[i] * g.opacity;
    for (std::size_t k = 0; k < sh_count; ++k) sh[k] += w[i] * g.sh[k];
  }
  Mat3 cov = second / total - mean * mean.transpose();
  cov = 0.5 * (cov + cov.transpose());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Vec3 values = eig.eigenvalues().cwiseMax(1e-12);
  Mat3 axes = eig.eigenvectors();
  if (axes.determinant() < 0.0) axes.col(0) = -axes.col(0);

  Gaussian out;
  out.id = id;
  out.position = mean;
  out.scale = values.cwiseSqrt();
  out.rotation = Quat(axes).normalized();
  out.opacity = std::clamp(opacity / total, 0.0, 1.0);
  for (auto& c : sh) c /= total;
  out.sh = std::move(sh);
  return out;
}

namespace {

struct BuildNode {
  Gaussian g;
  double extent = 0.0;
  std::uint32_t parent = kNoNode;
};

class Builder {
 public:
  Builder(std::vector<Gaussian> leaves, int bucket) : leaves_(std::move(leaves)), bucket_(bucket) {}

  std::vector<BuildNode> run() {
    std::vector<std::uint32_t> all(leaves_.size());
    std::iota(all.begin(), all.end(), 0u);
    build(all);
    return std::move(nodes_);
  }

 private:
  std::uint32_t make_leaf(std::uint32_t leaf) {
    BuildNode b;
    b.g = leaves_[leaf];
    b.extent = own_extent(b.g);
    nodes_.push_back(std::move(b));
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  std::uint32_t make_parent(const std::vector<std::uint32_t>& kids) {
    std::vector<Gaussian> group;
    group.reserve(kids.size());
    for (std::uint32_t k : kids) group.push_back(nodes_[k].g);
    BuildNode b;
    b.g = merge_gaussians(group, 0);
    b.extent = own_extent(b.g);
    for (std::uint32_t k : kids)
      b.extent = std::max(b.extent, (nodes_[k].g.position - b.g.position).norm() + nodes_[k].extent);
    nodes_.push_back(std::move(b));
    const auto self = static_cast<std::uint32_t>(nodes_.size() - 1);
    for (std::uint32_t k : kids) nodes_[k].parent = self;
    return self;
  }

  std::uint32_t build(const std::vector<std::uint32_t>& idx) {
    if (idx.size() == 1) return make_leaf(idx[0]);
    std::vector<std::uint32_t> kids;
    if (idx.size() <= static_cast<std::size_t>(bucket_)) {
      for (std::uint32_t i : idx) kids.push_back(make_leaf(i));
      return make_parent(kids);
    }
    for (const auto& group : split(idx)) kids.push_back(build(group));
    return make_parent(kids);
  }

  std::vector<std::vector<std::uint32_t>> split(const std::vector<std::uint32_t>& idx) const {
    Vec3 lo = Vec3::Constant(INFINITY), hi = Vec3::Constant(-INFINITY);
    for (std::uint32_t i : idx) {
      lo = lo.cwiseMin(leaves_[i].position);
      hi = hi.cwiseMax(leaves_[i].position);
    }
    std::vector<std::vector<std::uint32_t>> groups;
    if ((hi - lo).maxCoeff() <= 0.0) {
      // Coincident centers: fall back to index chunks.
      const std::size_t chunk = (idx.size() + bucket_ - 1) / bucket_;
      for (std::size_t s = 0; s < idx.size(); s += chunk)
        groups.emplace_back(idx.begin() + s, idx.begin() + std::min(idx.size(), s + chunk));
      return groups;
    }
    const Vec3 mid = 0.5 * (lo + hi);
    std::vector<std::uint32_t> octant[8];
    for (std::uint32_t i : idx) {
      const Vec3& p = leaves_[i].position;
      const int o = (p.x() > mid.x()) | ((p.y() > mid.y()) << 1) | ((p.z() > mid.z()) << 2);
      octant[o].push_back(i);
    }
    for (auto& o : octant)
      if (!o.empty()) groups.push_back(std::move(o));
    return groups;
  }

  std::vector<Gaussian> leaves_;
  int bucket_;
  std::vector<BuildNode> nodes_;
};

}  // namespace

LodTree build_lod_tree(std::vector<Gaussian> gaussians, int bucket) {
  NEBULA_EXPECT(!gaussians.empty(), "build_lod_tree: need at least one Gaussian");
  NEBULA_EXPECT(bucket >= 2, "build_lod_tree: bucket must be >= 2");
  std::uint32_t next_id = 0;
  for (const Gaussian& g : gaussians) {
    g.validate();
    next_id = std::max(next_id, g.id + 1);
  }
  std::vector<BuildNode> built = Builder(std::move(gaussians), bucket).run();

  std::vector<LodNode> nodes(built.size());
  std::vector<char> interior(built.size(), 0);
  for (std::size_t i = 0; i < built.size(); ++i) {
    nodes[i].gaussian = std::move(built[i].g);
    nodes[i].extent = built[i].extent;
    nodes[i].parent = built[i].parent;
    if (built[i].parent != kNoNode) interior[built[i].parent] = 1;
  }
  // Interior ids are assigned after layout so they follow level order.
  LodTree laid = level_order_layout(std::move(nodes));
  std::vector<LodNode> out(laid.nodes().begin(), laid.nodes().end());
  for (LodNode& v : out)
    if (!v.is_leaf()) v.gaussian.id = next_id++;
  return LodTree(std::move(out));
}

// ---------------------------------------------------------------------------
// NLOD

std::vector<std::uint8_t> encode_nlod(const LodTree& tree) {
  ByteWriter w;
  w.reserve(16 + tree.size() * kNlodRecordSize);
  w.tag("NLOD");
  w.u32(kNlodVersion);
  w.u64(tree.size());
  for (const LodNode& n : tree.nodes()) put_record(w, n, true);
  return std::move(w).take();
}

LodTree decode_nlod(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  try {
    r.expect_tag("NLOD");
  } catch (const ProtocolError&) {
    throw FormatError("not an NLOD file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kNlodVersion) throw FormatError("unsupported NLOD version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  if (r.remaining() != count * kNlodRecordSize)
    throw FormatError("NLOD size mismatch: " + std::to_string(count) + " records declared, " +
                      std::to_string(r.remaining()) + " payload bytes");
  std::vector<LodNode> nodes;
  nodes.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) nodes.push_back(get_record(r));
  return LodTree(std::move(nodes));
}

void save_nlod(const std::string& path, const LodTree& tree) { write_file_bytes(path, encode_nlod(tree)); }

LodTree load_nlod(const std::string& path) { return decode_nlod(read_file_bytes(path)); }

}  // namespace nebula::scene
