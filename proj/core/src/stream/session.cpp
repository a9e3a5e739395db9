#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "nebula/core/errors.hpp"
#include "nebula/stream/stream.hpp"

namespace nebula::stream {

// ---------------------------------------------------------------------------
// Cloud

CloudSession::CloudSession(const scene::LodTree& tree, codec::Codebook book, codec::QuantParams params,
                           CloudConfig config)
    : wire_(make_wire_tree(tree, params)), book_(std::move(book)), config_(config), table_(config.management) {
  NEBULA_EXPECT(book_.sh_degree() == tree.sh_degree(), "cloud session: codebook SH degree does not match tree");
}

ServerHello CloudSession::hello() const {
  ServerHello h;
  h.scene_hash = wire_.tree.uid();
  h.management = config_.management;
  h.tau_star = config_.search.tau_star;
  h.frustum_margin_px = config_.search.frustum_margin_px;
  h.params = wire_.params;
  h.extent_range = wire_.extent_range;
  return h;
}

WireMessage CloudSession::codebook_message() const { return {MessageType::codebook, codec::encode_codebook(book_)}; }

WireMessage CloudSession::delta_message(std::uint32_t round, const search::Cut& cut,
                                        std::span<const std::uint32_t> nodes) const {
  DeltaCut d;
  d.round = round;
  d.cut = cut.members;
  std::vector<Gaussian> gs;
  std::vector<std::uint32_t> parents;
  gs.reserve(nodes.size());
  parents.reserve(nodes.size());
  for (std::uint32_t v : nodes) {
    const scene::LodNode& n = wire_.tree.node(v);
    gs.push_back(n.gaussian);
    gs.back().id = v;
    parents.push_back(n.is_root() ? codec::kNoParent : n.parent);
    d.extent_codes.push_back(wire_.extent_codes[v]);
    d.leaf_flags.push_back(n.is_leaf() ? 1 : 0);
  }
  d.payload = codec::encode_payload(gs, wire_.params, book_, parents);
  return encode_delta_cut(d);
}

std::size_t CloudSession::full_resend_bytes(const search::Cut& cut) const {
  return delta_message(0, cut, cut.members).wire_size();
}

RoundRecord CloudSession::run_round(const Camera& camera, std::uint32_t frame) {
  const auto start = std::chrono::steady_clock::now();
  RoundRecord rec;
  rec.round = round_++;
  rec.frame = frame;
  const scene::LodTree& tree = wire_.tree;
  if (prev_ && config_.temporal) {
    auto res = search::temporal_cut_search(tree, camera, *prev_, config_.search, config_.workers);
    rec.cut = std::move(res.cut);
    rec.stats = res.stats;
    rec.temporal = true;
  } else {
    auto res = search::full_cut_search(tree, camera, config_.search, config_.workers);
    rec.cut = std::move(res.cut);
    rec.stats = res.stats;
  }
  rec.search_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (rec.temporal && config_.verify_search)
    rec.verified = rec.cut.members == search::full_cut_search(tree, camera, config_.search, config_.workers).cut.members;
  rec.cut.frame = frame;
  rec.update = cloud_update(table_, rec.cut);
  prev_ = rec.cut;
  log_.push_back(rec);
  return rec;
}

std::vector<WireMessage> CloudSession::handle(const WireMessage& msg) {
  std::vector<WireMessage> out;
  switch (msg.type) {
    case MessageType::hello:
      client_ = decode_client_hello(msg);
      out.push_back(encode_hello(hello()));
      out.push_back(codebook_message());
      break;
    case MessageType::pose: {
      if (!client_) throw ProtocolError("POSE before HELLO", 0);
      const PoseMessage pose = decode_pose(msg);
      RoundRecord rec = run_round(pose_camera(pose, *client_), pose.frame);
      const auto start = std::chrono::steady_clock::now();
      WireMessage m = delta_message(rec.round, rec.cut, rec.update.delta);
      log_.back().encode_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log_.back().delta_bytes = m.wire_size();
      log_.back().full_bytes = full_resend_bytes(rec.cut);
      out.push_back(std::move(m));
      break;
    }
    case MessageType::ack: {
      const Ack a = decode_ack(msg);
      if (a.stored != table_.size() || a.digest != table_.key_digest())
        throw ProtocolError("ACK for round " + std::to_string(a.round) + ": client state diverged from cloud table", 0);
      break;
    }
    default:
      throw ProtocolError("unexpected message type from client", 4);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Client

ClientSession::ClientSession(ClientHello intrinsics) : intrinsics_(intrinsics) {}

std::optional<WireMessage> ClientSession::handle(const WireMessage& msg) {
  switch (msg.type) {
    case MessageType::hello:
      server_ = decode_server_hello(msg);
      graph_ = ClientSubgraph{};
      graph_.reuse = ReuseTable(server_->management);
      return std::nullopt;
    case MessageType::codebook:
      book_ = codec::decode_codebook(msg.payload);
      return std::nullopt;
    case MessageType::delta_cut: {
      if (!ready()) throw ProtocolError("DELTA_CUT before HELLO and CODEBOOK", 0);
      const DeltaCut d = decode_delta_cut(msg, *book_);
      client_apply(graph_, d, server_->params, *book_, server_->extent_range);
      Ack a;
      a.round = d.round;
      a.stored = static_cast<std::uint32_t>(graph_.reuse.size());
      a.digest = graph_.reuse.key_digest();
      return encode_ack(a);
    }
    default:
      throw ProtocolError("unexpected message type from cloud", 4);
  }
}

std::vector<std::uint32_t> ClientSession::select_queue(const Camera& camera) const {
  if (!server_) return {};
  search::SearchConfig cfg;
  cfg.tau_star = server_->tau_star;
  cfg.frustum_margin_px = server_->frustum_margin_px;
  return client_select_queue(graph_, camera, cfg);
}

std::vector<Gaussian> ClientSession::queue_gaussians(const Camera& camera) const {
  std::vector<Gaussian> out;
  for (std::uint32_t id : select_queue(camera)) out.push_back(graph_.nodes.at(id).gaussian);
  return out;
}

// ---------------------------------------------------------------------------
// Bandwidth

double required_rate(std::size_t bytes, std::uint32_t frame_interval, double target_fps) {
  NEBULA_EXPECT(frame_interval >= 1 && target_fps > 0.0, "bandwidth: invalid interval or fps");
  return 8.0 * static_cast<double>(bytes) / (static_cast<double>(frame_interval) / target_fps);
}

BandwidthReport bandwidth_report(std::span<const RoundRecord> rounds, std::uint32_t frame_interval,
                                 double target_fps) {
  BandwidthReport rep;
  std::vector<double> rates;
  for (const RoundRecord& r : rounds) {
    BandwidthRow row{r.round, r.delta_bytes, required_rate(r.delta_bytes, frame_interval, target_fps)};
    rep.rows.push_back(row);
    rep.total_bytes += r.delta_bytes;
    rates.push_back(row.required_bps);
  }
  if (!rates.empty()) {
    double sum = 0.0;
    for (double v : rates) sum += v;
    rep.mean_bps = sum / static_cast<double>(rates.size());
    std::sort(rates.begin(), rates.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(rates.size())));
    rep.p95_bps = rates[std::max<std::size_t>(rank, 1) - 1];
  }
  return rep;
}

std::string BandwidthReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "round,bytes,required_bps\n";
  for (const auto& r : rows) os << r.round << ',' << r.bytes << ',' << r.required_bps << '\n';
  os << "mean,," << mean_bps << "\np95,," << p95_bps << '\n';
  return os.str();
}

}  // namespace nebula::stream
