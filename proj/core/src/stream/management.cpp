#include <algorithm>

#include "nebula/core/binary_io.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/stream/stream.hpp"

namespace nebula::stream {

ReuseTable::ReuseTable(ManagementConfig config) : config_(config) {
  NEBULA_EXPECT(config.frame_interval >= 1, "frame interval w must be >= 1");
}

RoundUpdate ReuseTable::update(std::span<const std::uint32_t> cut) {
  NEBULA_EXPECT(std::is_sorted(cut.begin(), cut.end()), "reuse update: cut must be sorted");
  RoundUpdate out;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> next;
  next.reserve(entries_.size() + cut.size());
  std::size_t i = 0, j = 0;
  while (i < entries_.size() || j < cut.size()) {
    if (j == cut.size() || (i < entries_.size() && entries_[i].first < cut[j])) {
      const std::uint32_t aged = entries_[i].second + config_.frame_interval;
      if (aged > config_.reuse_threshold) {
        out.evictions.push_back(entries_[i].first);
      } else {
        next.emplace_back(entries_[i].first, aged);
      }
      ++i;
    } else if (i == entries_.size() || cut[j] < entries_[i].first) {
      if (next.empty() || next.back().first != cut[j]) {
        out.delta.push_back(cut[j]);
        next.emplace_back(cut[j], 0u);
      }
      ++j;
    } else {
      next.emplace_back(cut[j], 0u);
      ++i;
      ++j;
    }
  }
  entries_ = std::move(next);
  ++rounds_;
  return out;
}

bool ReuseTable::contains(std::uint32_t id) const { return window(id).has_value(); }

std::optional<std::uint32_t> ReuseTable::window(std::uint32_t id) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                             [](const auto& e, std::uint32_t v) { return e.first < v; });
  if (it == entries_.end() || it->first != id) return std::nullopt;
  return it->second;
}

std::vector<std::uint32_t> ReuseTable::keys() const {
  std::vector<std::uint32_t> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::uint64_t ReuseTable::key_digest() const {
  ByteWriter w;
  for (const auto& e : entries_) w.u32(e.first);
  return fnv1a(w.data());
}

RoundUpdate cloud_update(ManagementTable& table, const search::Cut& new_cut) { return table.update(new_cut.members); }

std::vector<std::uint32_t> ClientSubgraph::ids() const {
  std::vector<std::uint32_t> out;
  out.reserve(nodes.size());
  for (const auto& [id, n] : nodes) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

ApplyResult client_apply(ClientSubgraph& graph, const DeltaCut& delta, const codec::QuantParams& params,
                         const codec::Codebook& book, const ExtentRange& extents) {
  const codec::Payload payload = codec::decode_payload(delta.payload, params, book);
  const std::size_t n = payload.gaussians.size();
  if (delta.extent_codes.size() != n || delta.leaf_flags.size() != n)
    throw ProtocolError("delta cut: node block does not match payload count");
  if (!std::is_sorted(delta.cut.begin(), delta.cut.end()) ||
      std::adjacent_find(delta.cut.begin(), delta.cut.end()) != delta.cut.end())
    throw ProtocolError("delta cut: membership list not strictly ascending");

  ApplyResult out;
  for (std::size_t i = 0; i < n; ++i) {
    ClientNode node;
    node.gaussian = payload.gaussians[i];
    node.parent = payload.parents[i];
    node.extent = decode_extent(delta.extent_codes[i], extents);
    node.leaf = delta.leaf_flags[i] & 1u;
    const std::uint32_t id = node.gaussian.id;
    auto [it, fresh] = graph.nodes.insert_or_assign(id, std::move(node));
    if (!fresh) ++graph.duplicate_inserts;
    out.inserted.push_back(id);
  }
  for (std::uint32_t id : delta.cut)
    if (!graph.nodes.count(id)) throw ProtocolError("delta cut: member " + std::to_string(id) + " was never delivered");

  RoundUpdate u = graph.reuse.update(delta.cut);
  for (std::uint32_t id : u.evictions) graph.nodes.erase(id);
  // Anything stored but unknown to the reuse table was delivered without
  // being a member; the cloud never does that, so treat it as stray.
  if (graph.nodes.size() != graph.reuse.size())
    throw ProtocolError("delta cut: stored set diverged from reuse table");
  out.evicted = std::move(u.evictions);
  graph.last_cut = delta.cut;
  return out;
}

std::vector<std::uint32_t> client_select_queue(const ClientSubgraph& graph, const Camera& camera,
                                               const search::SearchConfig& config) {
  std::vector<std::uint32_t> queue;
  if (graph.nodes.empty()) return queue;
  const search::LodView view(camera, config);
  auto big = [&](const ClientNode& n) { return view.evaluate(n.gaussian.position, n.extent).big; };
  for (const auto& [id, node] : graph.nodes) {
    if (!node.leaf && big(node)) continue;
    bool parent_ok = true;
    if (node.parent != codec::kNoParent) {
      auto p = graph.nodes.find(node.parent);
      parent_ok = p != graph.nodes.end() ? big(p->second)
                                         : std::binary_search(graph.last_cut.begin(), graph.last_cut.end(), id);
    }
    if (parent_ok) queue.push_back(id);
  }
  std::sort(queue.begin(), queue.end());
  return queue;
}

}  // namespace nebula::stream
