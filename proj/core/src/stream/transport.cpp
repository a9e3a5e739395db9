#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include "nebula/core/errors.hpp"
#include "nebula/stream/stream.hpp"

namespace nebula::stream {

// ---------------------------------------------------------------------------
// Simulated link

class SimulatedLink::End : public Transport {
 public:
  End(SimulatedLink& link, Side side) : link_(link), side_(side) {}

  void send(const WireMessage& msg) override {
    auto bytes = encode_frame(msg);
    if (side_ == Side::cloud) {
      link_.down_log_.push_back(channel_send(link_.down_, bytes.size(), link_.now_));
      link_.to_client_.push_back(std::move(bytes));
    } else {
      link_.up_log_.push_back(channel_send(link_.up_, bytes.size(), link_.now_));
      link_.to_cloud_.push_back(std::move(bytes));
    }
  }

  std::optional<WireMessage> receive() override {
    auto& q = side_ == Side::cloud ? link_.to_cloud_ : link_.to_client_;
    if (q.empty()) return std::nullopt;
    WireMessage m = decode_frame(q.front());
    q.pop_front();
    return m;
  }

 private:
  SimulatedLink& link_;
  Side side_;
};

SimulatedLink::SimulatedLink(ChannelModel downlink, ChannelModel uplink)
    : down_(downlink),
      up_(uplink),
      cloud_end_(std::make_unique<End>(*this, Side::cloud)),
      client_end_(std::make_unique<End>(*this, Side::client)) {}

SimulatedLink::~SimulatedLink() = default;

Transport& SimulatedLink::endpoint(Side side) { return side == Side::cloud ? *cloud_end_ : *client_end_; }

// ---------------------------------------------------------------------------
// Sockets

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
}

// False on a clean EOF before the first byte.
bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, data + got, n - got, 0);
    if (k < 0) {
      if (errno == EINTR) continue;
      sys_fail("recv");
    }
    if (k == 0) {
      if (got == 0) return false;
      throw ProtocolError("connection closed mid-frame", got);
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

SocketTransport::SocketTransport(int fd) : fd_(fd) {
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

SocketTransport::~SocketTransport() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<SocketTransport> SocketTransport::connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw std::runtime_error("getaddrinfo(" + host + "): " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) sys_fail("connect to " + host + ":" + std::to_string(port));
  return std::make_unique<SocketTransport>(fd);
}

SocketTransport::Listener::Listener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    ::close(fd_);
    sys_fail("bind port " + std::to_string(port));
  }
  if (::listen(fd_, 1) < 0) {
    ::close(fd_);
    sys_fail("listen");
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

SocketTransport::Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<SocketTransport> SocketTransport::Listener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<SocketTransport>(fd);
    if (errno != EINTR) sys_fail("accept");
  }
}

void SocketTransport::send(const WireMessage& msg) {
  const auto bytes = encode_frame(msg);
  write_all(fd_, bytes.data(), bytes.size());
}

std::optional<WireMessage> SocketTransport::receive() {
  std::array<std::uint8_t, WireMessage::kFrameHeaderSize> header{};
  if (!read_all(fd_, header.data(), header.size())) return std::nullopt;
  WireMessage m;
  const std::uint32_t len = parse_frame_header(header, &m.type);
  m.payload.resize(len);
  if (len > 0 && !read_all(fd_, m.payload.data(), len)) throw ProtocolError("connection closed mid-frame", 5);
  return m;
}

}  // namespace nebula::stream
