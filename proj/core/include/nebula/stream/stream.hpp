#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nebula/codec/codec.hpp"
#include "nebula/core/types.hpp"
#include "nebula/scene/lod_tree.hpp"
#include "nebula/search/cut_search.hpp"

namespace nebula::stream {

// ---------------------------------------------------------------------------
// Reuse bookkeeping

struct ManagementConfig {
  std::uint32_t reuse_threshold = 32;  // w_r*, frames
  std::uint32_t frame_interval = 4;    // w, frames between LoD rounds
};

struct RoundUpdate {
  std::vector<std::uint32_t> delta;      // cut members not held before the round, ascending
  std::vector<std::uint32_t> evictions;  // ids dropped this round, ascending
};

// id -> frames since the id was last in a cut. Shared by the cloud table and
// the client mirror so both apply literally the same rule.
class ReuseTable {
 public:
  ReuseTable() : ReuseTable(ManagementConfig{}) {}
  explicit ReuseTable(ManagementConfig config);

  // For a sorted cut: members reset to 0 (inserted if new), everything else
  // ages by w and is evicted once above w_r*.
  RoundUpdate update(std::span<const std::uint32_t> cut);

  bool contains(std::uint32_t id) const;
  std::optional<std::uint32_t> window(std::uint32_t id) const;
  std::vector<std::uint32_t> keys() const;
  std::size_t size() const { return entries_.size(); }
  std::uint64_t rounds() const { return rounds_; }
  const ManagementConfig& config() const { return config_; }
  // Order-independent digest of the key set.
  std::uint64_t key_digest() const;

 private:
  ManagementConfig config_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries_;  // ascending id
  std::uint64_t rounds_ = 0;
};

using ManagementTable = ReuseTable;

RoundUpdate cloud_update(ManagementTable& table, const search::Cut& new_cut);

// ---------------------------------------------------------------------------
// Wire tree: the cloud's searchable copy whose LoD inputs survive the trip to
// the client bit for bit.

struct ExtentRange {
  double log_min = -8.0;
  double log_max = 8.0;
  bool operator==(const ExtentRange&) const = default;
};

std::uint16_t encode_extent_up(double extent, const ExtentRange& range);
double decode_extent(std::uint16_t code, const ExtentRange& range);

struct WireTree {
  scene::LodTree tree;                   // positions dequantized, extents decoded
  std::vector<std::uint16_t> extent_codes;
  ExtentRange extent_range;
  codec::QuantParams params;
};

// Replaces positions by their fixed-point values and re-derives extents
// bottom-up from the quantized positions, rounding each up to a 16-bit log
// code, so nested extents still hold for the values the client decodes.
WireTree make_wire_tree(const scene::LodTree& tree, const codec::QuantParams& params);

// ---------------------------------------------------------------------------
// Channel

struct ChannelModel {
  double rate_bps = 100e6;
  double joules_per_byte = 100e-9;
  double latency_s = 10e-3;

  std::uint64_t bytes_sent = 0;
  double energy_j = 0.0;
  std::uint64_t messages = 0;
  std::vector<double> transfer_times;

  double transfer_time(std::size_t bytes) const { return latency_s + 8.0 * static_cast<double>(bytes) / rate_bps; }
};

struct Delivery {
  double send_time = 0.0;
  double arrival_time = 0.0;
  std::size_t bytes = 0;
  double energy_j = 0.0;
};

Delivery channel_send(ChannelModel& channel, std::size_t bytes, double send_time);

// ---------------------------------------------------------------------------
// Wire framing

enum class MessageType : std::uint8_t { hello = 1, codebook = 2, pose = 3, delta_cut = 4, ack = 5 };

struct WireMessage {
  MessageType type = MessageType::ack;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size() const { return kFrameHeaderSize + payload.size(); }
  static constexpr std::size_t kFrameHeaderSize = 5;
};

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

// u32 payload length, u8 type, payload.
std::vector<std::uint8_t> encode_frame(const WireMessage& msg);
// Decodes exactly one frame. Throws ProtocolError on truncation, length
// mismatch or an unknown type.
WireMessage decode_frame(std::span<const std::uint8_t> bytes);
// Parses a frame header; returns the payload length.
std::uint32_t parse_frame_header(std::span<const std::uint8_t, WireMessage::kFrameHeaderSize> header,
                                 MessageType* type);

// Client -> cloud: camera intrinsics the LoD search must use.
struct ClientHello {
  std::uint32_t version = kProtocolVersion;
  double focal = 0.0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  double near = 0.1;
  double far = 1000.0;
};

// Cloud -> client: scene identity and every parameter the client mirrors.
struct ServerHello {
  std::uint32_t version = kProtocolVersion;
  std::uint64_t scene_hash = 0;
  ManagementConfig management;
  double tau_star = 4.0;
  double frustum_margin_px = 32.0;
  codec::QuantParams params;
  ExtentRange extent_range;
};

struct PoseMessage {
  std::uint32_t frame = 0;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();  // camera-to-world
};

struct DeltaCut {
  std::uint32_t round = 0;
  std::vector<std::uint32_t> cut;                 // full membership, ascending
  std::vector<std::uint8_t> payload;              // codec payload for the delta nodes
  std::vector<std::uint16_t> extent_codes;        // per delta node
  std::vector<std::uint8_t> leaf_flags;           // per delta node
};

struct Ack {
  std::uint32_t round = 0;
  std::uint32_t stored = 0;
  std::uint64_t digest = 0;
};

WireMessage encode_hello(const ClientHello& h);
WireMessage encode_hello(const ServerHello& h);
ClientHello decode_client_hello(const WireMessage& m);
ServerHello decode_server_hello(const WireMessage& m);
WireMessage encode_pose(const PoseMessage& p);
PoseMessage decode_pose(const WireMessage& m);
WireMessage encode_delta_cut(const DeltaCut& d);
DeltaCut decode_delta_cut(const WireMessage& m, const codec::Codebook& book);
WireMessage encode_ack(const Ack& a);
Ack decode_ack(const WireMessage& m);

// Camera for a received pose: client intrinsics, pose as carried on the wire
// (f32), principal point centered.
Camera pose_camera(const PoseMessage& pose, const ClientHello& intrinsics);
// Pose message for a camera, rounded to f32 like the wire does.
PoseMessage camera_pose(const Camera& camera, std::uint32_t frame);

// ---------------------------------------------------------------------------
// Transports

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const WireMessage& msg) = 0;
  // Next message in FIFO order, or nullopt if none is pending / the peer closed.
  virtual std::optional<WireMessage> receive() = 0;
};

// In-process duplex link. Each direction is a FIFO with its own channel
// model; frames cross as encoded bytes so both ends see exactly the wire
// format the socket transport carries.
class SimulatedLink {
 public:
  enum class Side { cloud, client };
  explicit SimulatedLink(ChannelModel downlink = {}, ChannelModel uplink = {});
  ~SimulatedLink();
  SimulatedLink(const SimulatedLink&) = delete;
  SimulatedLink& operator=(const SimulatedLink&) = delete;

  Transport& endpoint(Side side);
  void set_time(double t) { now_ = t; }
  double time() const { return now_; }
  const ChannelModel& downlink() const { return down_; }  // cloud -> client
  const ChannelModel& uplink() const { return up_; }      // client -> cloud
  const std::vector<Delivery>& downlink_log() const { return down_log_; }

 private:
  class End;
  ChannelModel down_, up_;
  std::deque<std::vector<std::uint8_t>> to_client_, to_cloud_;
  std::vector<Delivery> down_log_, up_log_;
  std::unique_ptr<End> cloud_end_, client_end_;
  double now_ = 0.0;
};

// Blocking TCP stream carrying the same frames.
class SocketTransport : public Transport {
 public:
  explicit SocketTransport(int fd);
  ~SocketTransport() override;
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  static std::unique_ptr<SocketTransport> connect(const std::string& host, std::uint16_t port);
  // Listens on port (0 picks one), accepts a single peer.
  class Listener {
   public:
    explicit Listener(std::uint16_t port);
    ~Listener();
    std::uint16_t port() const { return port_; }
    std::unique_ptr<SocketTransport> accept();

   private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
  };

  void send(const WireMessage& msg) override;
  std::optional<WireMessage> receive() override;

 private:
  int fd_;
};

// ---------------------------------------------------------------------------
// Client subgraph

struct ClientNode {
  Gaussian gaussian;  // decoded
  std::uint32_t parent = codec::kNoParent;
  double extent = 0.0;
  bool leaf = false;
};

struct ClientSubgraph {
  std::unordered_map<std::uint32_t, ClientNode> nodes;
  ReuseTable reuse;
  std::vector<std::uint32_t> last_cut;
  std::uint64_t duplicate_inserts = 0;

  std::vector<std::uint32_t> ids() const;  // ascending
};

struct ApplyResult {
  std::vector<std::uint32_t> inserted;
  std::vector<std::uint32_t> evicted;
};

// Inserts the delta nodes, ages reuse windows by the carried membership and
// evicts exactly as the cloud did. Throws ProtocolError if a cut member is
// neither stored nor delivered.
ApplyResult client_apply(ClientSubgraph& graph, const DeltaCut& delta, const codec::QuantParams& params,
                         const codec::Codebook& book, const ExtentRange& extents);

// Local LoD selection at the client's own pose. A stored node is queued iff
// it is a leaf or no larger than tau_star, and its parent is larger than
// tau_star; when the parent is no longer stored, membership in the last
// received cut decides.
std::vector<std::uint32_t> client_select_queue(const ClientSubgraph& graph, const Camera& camera,
                                               const search::SearchConfig& config);

// ---------------------------------------------------------------------------
// Sessions

struct CloudConfig {
  ManagementConfig management;
  search::SearchConfig search;
  int workers = 1;
  bool temporal = true;       // temporal search after the first round
  bool verify_search = false; // also run the full search and compare
};

struct RoundRecord {
  std::uint32_t round = 0;
  std::uint32_t frame = 0;
  search::Cut cut;
  search::SearchStats stats;
  bool temporal = false;
  bool verified = true;  // temporal cut equaled the full search (when checked)
  RoundUpdate update;
  std::size_t delta_bytes = 0;  // DELTA_CUT frame bytes
  std::size_t full_bytes = 0;   // frame bytes had every member been sent
  double search_seconds = 0.0;
  double encode_seconds = 0.0;  // DELTA_CUT construction, filled by handle()
};

class CloudSession {
 public:
  CloudSession(const scene::LodTree& tree, codec::Codebook book, codec::QuantParams params, CloudConfig config);

  ServerHello hello() const;
  WireMessage codebook_message() const;
  // Responds to client messages: HELLO -> (HELLO, CODEBOOK), POSE -> DELTA_CUT,
  // ACK -> nothing (checked against the table).
  std::vector<WireMessage> handle(const WireMessage& msg);

  // One LoD round at the given camera.
  RoundRecord run_round(const Camera& camera, std::uint32_t frame);

  const WireTree& wire_tree() const { return wire_; }
  const ManagementTable& table() const { return table_; }
  const std::vector<RoundRecord>& log() const { return log_; }
  const codec::Codebook& codebook() const { return book_; }
  // Size of a DELTA_CUT frame that resends every member of the cut.
  std::size_t full_resend_bytes(const search::Cut& cut) const;

 private:
  WireMessage delta_message(std::uint32_t round, const search::Cut& cut, std::span<const std::uint32_t> nodes) const;

  WireTree wire_;
  codec::Codebook book_;
  CloudConfig config_;
  ManagementTable table_;
  std::optional<search::Cut> prev_;
  std::optional<ClientHello> client_;
  std::vector<RoundRecord> log_;
  std::uint32_t round_ = 0;
};

class ClientSession {
 public:
  explicit ClientSession(ClientHello intrinsics);

  WireMessage hello() const { return encode_hello(intrinsics_); }
  // Consumes a cloud message; returns the ACK for DELTA_CUT.
  std::optional<WireMessage> handle(const WireMessage& msg);

  bool ready() const { return server_.has_value() && book_.has_value(); }
  const ServerHello& server() const { return *server_; }
  const ClientSubgraph& subgraph() const { return graph_; }
  const ClientHello& intrinsics() const { return intrinsics_; }
  std::uint64_t rounds_applied() const { return graph_.reuse.rounds(); }

  std::vector<std::uint32_t> select_queue(const Camera& camera) const;
  std::vector<Gaussian> queue_gaussians(const Camera& camera) const;

 private:
  ClientHello intrinsics_;
  std::optional<ServerHello> server_;
  std::optional<codec::Codebook> book_;
  ClientSubgraph graph_;
};

// ---------------------------------------------------------------------------
// Bandwidth

struct BandwidthRow {
  std::uint32_t round = 0;
  std::size_t bytes = 0;
  double required_bps = 0.0;
};

struct BandwidthReport {
  std::vector<BandwidthRow> rows;
  double mean_bps = 0.0;
  double p95_bps = 0.0;
  std::size_t total_bytes = 0;

  std::string to_csv() const;
};

// required rate = 8 * bytes / (w / fps). The 95th percentile is nearest-rank.
BandwidthReport bandwidth_report(std::span<const RoundRecord> rounds, std::uint32_t frame_interval,
                                 double target_fps = 90.0);
double required_rate(std::size_t bytes, std::uint32_t frame_interval, double target_fps);

}  // namespace nebula::stream
