#include <algorithm>
#include <cmath>

#include "nebula/core/binary_io.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/stream/stream.hpp"

namespace nebula::stream {

// ---------------------------------------------------------------------------
// Extents and the wire tree

std::uint16_t encode_extent_up(double extent, const ExtentRange& range) {
  NEBULA_EXPECT(extent > 0.0, "extent must be positive");
  const double t = (std::log(extent) - range.log_min) / (range.log_max - range.log_min);
  if (t > 1.0) throw DataError("extent " + std::to_string(extent) + " above the coded range");
  auto code = static_cast<std::uint32_t>(std::max(0.0, std::ceil(t * 65535.0)));
  while (code < 65535 && decode_extent(static_cast<std::uint16_t>(code), range) < extent) ++code;
  if (decode_extent(static_cast<std::uint16_t>(code), range) < extent)
    throw DataError("extent " + std::to_string(extent) + " above the coded range");
  return static_cast<std::uint16_t>(code);
}

double decode_extent(std::uint16_t code, const ExtentRange& range) {
  return std::exp(codec::dequantize(code, range.log_min, range.log_max));
}

WireTree make_wire_tree(const scene::LodTree& tree, const codec::QuantParams& params) {
  params.validate();
  WireTree out;
  out.params = params;
  std::vector<scene::LodNode> nodes(tree.nodes().begin(), tree.nodes().end());
  if (nodes.empty()) {
    out.tree = scene::LodTree(std::move(nodes));
    return out;
  }

  double lo = INFINITY, hi = 0.0;
  for (const auto& n : nodes) {
    lo = std::min(lo, n.extent);
    hi = std::max(hi, n.extent);
  }
  NEBULA_EXPECT(lo > 0.0, "wire tree: node with zero extent");
  // Headroom for the growth caused by moving centers onto the grid.
  const double slack = params.position_step(0) + params.position_step(1) + params.position_step(2);
  out.extent_range = {std::log(lo) - 1e-3, std::log(2.0 * hi + 4.0 * tree.level_count() * slack)};

  for (auto& n : nodes) {
    for (int a = 0; a < 3; ++a) {
      const std::uint16_t q = codec::quantize_unit((n.gaussian.position[a] - params.box_min[a]) /
                                                   (params.box_max[a] - params.box_min[a]));
      n.gaussian.position[a] = codec::dequantize(q, params.box_min[a], params.box_max[a]);
    }
  }
  // Children come after parents in level order, so a reverse sweep sees
  // every child's final extent before its parent is coded.
  std::vector<double> need(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) need[i] = nodes[i].extent;
  out.extent_codes.assign(nodes.size(), 0);
  for (std::size_t i = nodes.size(); i-- > 0;) {
    out.extent_codes[i] = encode_extent_up(need[i], out.extent_range);
    nodes[i].extent = decode_extent(out.extent_codes[i], out.extent_range);
    if (!nodes[i].is_root()) {
      const std::uint32_t p = nodes[i].parent;
      need[p] = std::max(need[p], (nodes[i].gaussian.position - nodes[p].gaussian.position).norm() + nodes[i].extent);
    }
  }
  out.tree = scene::LodTree(std::move(nodes));
  if (!out.tree.extents_nested()) throw DataError("wire tree: extents not nested after quantization");
  return out;
}

// ---------------------------------------------------------------------------
// Channel

Delivery channel_send(ChannelModel& channel, std::size_t bytes, double send_time) {
  Delivery d;
  d.send_time = send_time;
  d.bytes = bytes;
  d.energy_j = static_cast<double>(bytes) * channel.joules_per_byte;
  const double t = channel.transfer_time(bytes);
  d.arrival_time = send_time + t;
  channel.bytes_sent += bytes;
  channel.energy_j += d.energy_j;
  channel.messages += 1;
  channel.transfer_times.push_back(t);
  return d;
}

// ---------------------------------------------------------------------------
// Framing

namespace {

bool known_type(std::uint8_t t) { return t >= 1 && t <= 5; }

void expect_type(const WireMessage& m, MessageType t, const char* what) {
  if (m.type != t) throw ProtocolError(std::string("expected ") + what + " message", 4);
}

void finish(const ByteReader& r, const char* what) {
  if (r.remaining()) throw ProtocolError(std::string(what) + ": trailing bytes", r.offset());
}

void put_params(ByteWriter& w, const codec::QuantParams& p) {
  for (int a = 0; a < 3; ++a) w.f64(p.box_min[a]);
  for (int a = 0; a < 3; ++a) w.f64(p.box_max[a]);
  w.f64(p.log_scale_min);
  w.f64(p.log_scale_max);
}

codec::QuantParams get_params(ByteReader& r) {
  codec::QuantParams p;
  for (int a = 0; a < 3; ++a) p.box_min[a] = r.f64();
  for (int a = 0; a < 3; ++a) p.box_max[a] = r.f64();
  p.log_scale_min = r.f64();
  p.log_scale_max = r.f64();
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const WireMessage& msg) {
  NEBULA_EXPECT(msg.payload.size() <= kMaxPayload, "frame payload too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(msg.payload.size()));
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.bytes(msg.payload);
  return std::move(w).take();
}

std::uint32_t parse_frame_header(std::span<const std::uint8_t, WireMessage::kFrameHeaderSize> header,
                                 MessageType* type) {
  ByteReader r(header);
  const std::uint32_t len = r.u32();
  const std::uint8_t t = r.u8();
  if (!known_type(t)) throw ProtocolError("unknown message type " + std::to_string(t), 4);
  if (len > kMaxPayload) throw ProtocolError("frame length " + std::to_string(len) + " too large", 0);
  *type = static_cast<MessageType>(t);
  return len;
}

WireMessage decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < WireMessage::kFrameHeaderSize) throw ProtocolError("truncated frame header", bytes.size());
  WireMessage m;
  const std::uint32_t len = parse_frame_header(bytes.first<WireMessage::kFrameHeaderSize>(), &m.type);
  const auto body = bytes.subspan(WireMessage::kFrameHeaderSize);
  if (body.size() != len)
    throw ProtocolError("frame length " + std::to_string(len) + " but " + std::to_string(body.size()) +
                            " payload bytes",
                        WireMessage::kFrameHeaderSize + std::min<std::size_t>(body.size(), len));
  m.payload.assign(body.begin(), body.end());
  return m;
}

// ---------------------------------------------------------------------------
// Messages

WireMessage encode_hello(const ClientHello& h) {
  ByteWriter w;
  w.u8(0);  // role: client
  w.u32(h.version);
  w.f64(h.focal);
  w.u32(h.width);
  w.u32(h.height);
  w.f64(h.near);
  w.f64(h.far);
  return {MessageType::hello, std::move(w).take()};
}

WireMessage encode_hello(const ServerHello& h) {
  ByteWriter w;
  w.u8(1);  // role: cloud
  w.u32(h.version);
  w.u64(h.scene_hash);
  w.u32(h.management.frame_interval);
  w.u32(h.management.reuse_threshold);
  w.f64(h.tau_star);
  w.f64(h.frustum_margin_px);
  put_params(w, h.params);
  w.f64(h.extent_range.log_min);
  w.f64(h.extent_range.log_max);
  return {MessageType::hello, std::move(w).take()};
}

ClientHello decode_client_hello(const WireMessage& m) {
  expect_type(m, MessageType::hello, "HELLO");
  ByteReader r(m.payload);
  if (r.u8() != 0) throw ProtocolError("HELLO: expected client role", 0);
  ClientHello h;
  h.version = r.u32();
  if (h.version != kProtocolVersion) throw ProtocolError("HELLO: protocol version " + std::to_string(h.version), 1);
  h.focal = r.f64();
  h.width = r.u32();
  h.height = r.u32();
  h.near = r.f64();
  h.far = r.f64();
  finish(r, "HELLO");
  return h;
}

ServerHello decode_server_hello(const WireMessage& m) {
  expect_type(m, MessageType::hello, "HELLO");
  ByteReader r(m.payload);
  if (r.u8() != 1) throw ProtocolError("HELLO: expected cloud role", 0);
  ServerHello h;
  h.version = r.u32();
  if (h.version != kProtocolVersion) throw ProtocolError("HELLO: protocol version " + std::to_string(h.version), 1);
  h.scene_hash = r.u64();
  h.management.frame_interval = r.u32();
  h.management.reuse_threshold = r.u32();
  h.tau_star = r.f64();
  h.frustum_margin_px = r.f64();
  h.params = get_params(r);
  h.extent_range.log_min = r.f64();
  h.extent_range.log_max = r.f64();
  finish(r, "HELLO");
  return h;
}

WireMessage encode_pose(const PoseMessage& p) {
  ByteWriter w;
  for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(p.position[a]));
  w.f32(static_cast<float>(p.orientation.w()));
  w.f32(static_cast<float>(p.orientation.x()));
  w.f32(static_cast<float>(p.orientation.y()));
  w.f32(static_cast<float>(p.orientation.z()));
  w.u32(p.frame);
  return {MessageType::pose, std::move(w).take()};
}

PoseMessage decode_pose(const WireMessage& m) {
  expect_type(m, MessageType::pose, "POSE");
  ByteReader r(m.payload);
  PoseMessage p;
  for (int a = 0; a < 3; ++a) p.position[a] = r.f32();
  const double w = r.f32(), x = r.f32(), y = r.f32(), z = r.f32();
  p.orientation = Quat(w, x, y, z);
  p.frame = r.u32();
  finish(r, "POSE");
  if (!p.position.allFinite() || !(p.orientation.norm() > 0.5)) throw ProtocolError("POSE: invalid pose", 0);
  return p;
}

WireMessage encode_delta_cut(const DeltaCut& d) {
  NEBULA_EXPECT(d.extent_codes.size() == d.leaf_flags.size(), "delta cut: node block size mismatch");
  ByteWriter w;
  w.u32(d.round);
  w.u32(static_cast<std::uint32_t>(d.cut.size()));
  std::uint32_t last = 0;
  for (std::size_t i = 0; i < d.cut.size(); ++i) {
    NEBULA_EXPECT(i == 0 || d.cut[i] > last, "delta cut: membership must be strictly ascending");
    w.varint(i == 0 ? d.cut[i] : d.cut[i] - last);
    last = d.cut[i];
  }
  w.bytes(d.payload);
  for (std::size_t i = 0; i < d.extent_codes.size(); ++i) {
    w.u16(d.extent_codes[i]);
    w.u8(d.leaf_flags[i]);
  }
  return {MessageType::delta_cut, std::move(w).take()};
}

DeltaCut decode_delta_cut(const WireMessage& m, const codec::Codebook& book) {
  expect_type(m, MessageType::delta_cut, "DELTA_CUT");
  ByteReader r(m.payload);
  DeltaCut d;
  d.round = r.u32();
  const std::uint32_t count = r.u32();
  if (count > r.remaining()) throw ProtocolError("DELTA_CUT: cut size exceeds message", 4);
  d.cut.reserve(count);
  std::uint64_t id = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint64_t step = r.varint();
    if (i > 0 && step == 0) throw ProtocolError("DELTA_CUT: repeated member", at);
    id = i == 0 ? step : id + step;
    if (id > 0xFFFFFFFFull) throw ProtocolError("DELTA_CUT: member id overflow", at);
    d.cut.push_back(static_cast<std::uint32_t>(id));
  }
  const std::size_t payload_at = r.offset();
  ByteReader peek(m.payload);
  (void)peek.bytes(payload_at);
  const std::uint32_t records = peek.u32();
  const std::size_t payload_len = codec::kPayloadHeaderSize + std::size_t(records) * codec::record_size(book);
  if (r.remaining() < payload_len) throw ProtocolError("DELTA_CUT: truncated payload", m.payload.size());
  const auto body = r.bytes(payload_len);
  d.payload.assign(body.begin(), body.end());
  d.extent_codes.resize(records);
  d.leaf_flags.resize(records);
  for (std::uint32_t i = 0; i < records; ++i) {
    d.extent_codes[i] = r.u16();
    d.leaf_flags[i] = r.u8();
  }
  finish(r, "DELTA_CUT");
  return d;
}

WireMessage encode_ack(const Ack& a) {
  ByteWriter w;
  w.u32(a.round);
  w.u32(a.stored);
  w.u64(a.digest);
  return {MessageType::ack, std::move(w).take()};
}

Ack decode_ack(const WireMessage& m) {
  expect_type(m, MessageType::ack, "ACK");
  ByteReader r(m.payload);
  Ack a;
  a.round = r.u32();
  a.stored = r.u32();
  a.digest = r.u64();
  finish(r, "ACK");
  return a;
}

Camera pose_camera(const PoseMessage& pose, const ClientHello& in) {
  return Camera::from_pose(pose.position, pose.orientation.normalized(), in.focal, static_cast<int>(in.width),
                           static_cast<int>(in.height), in.near, in.far);
}

PoseMessage camera_pose(const Camera& camera, std::uint32_t frame) {
  PoseMessage p;
  p.frame = frame;
  const Vec3 c = camera.position();
  const Quat q(Mat3(camera.rotation.transpose()));
  for (int a = 0; a < 3; ++a) p.position[a] = static_cast<float>(c[a]);
  p.orientation = Quat(static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()),
                       static_cast<float>(q.z()));
  return p;
}

}  // namespace nebula::stream
