#pragma once

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "p2e/error.hpp"

namespace p2e::edgenet {

using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

inline constexpr std::size_t kMaxFrameBytes = 1 << 20;

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    require(colon != std::string_view::npos && colon + 1 < text.size(), ErrorCode::config,
            "address must be host:port, got '" + std::string(text) + "'");
    Endpoint e;
    e.host = std::string(text.substr(0, colon));
    if (e.host.empty()) e.host = "127.0.0.1";
    int port = -1;
    try {
      std::size_t used = 0;
      port = std::stoi(std::string(text.substr(colon + 1)), &used);
      if (used != text.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
      port = -1;
    }
    require(port >= 0 && port <= 65535, ErrorCode::config, "invalid port in '" + std::string(text) + "'");
    e.port = static_cast<std::uint16_t>(port);
    return e;
  }

  std::string str() const { return host + ":" + std::to_string(port); }
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

namespace detail {

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

inline void resolve(const Endpoint& e, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(e.port);
  const int rc = getaddrinfo(e.host.c_str(), port.c_str(), &hints, &out.head);
  require(rc == 0 && out.head, ErrorCode::config, "cannot resolve " + e.str() + ": " + gai_strerror(rc));
}

/// Waits for `events` on fd; false on timeout.
inline bool wait_for(int fd, short events, Millis timeout) {
  pollfd p{fd, events, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(std::max<Millis::rep>(timeout.count(), 0)));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) return true;  // let the following call surface the error
  }
}

}  // namespace detail

inline Socket listen_tcp(const Endpoint& endpoint, int backlog = 64) {
  detail::AddrInfo info;
  detail::resolve(endpoint, true, info);
  Socket s(::socket(info.head->ai_family, info.head->ai_socktype, info.head->ai_protocol));
  require(s.valid(), ErrorCode::io, std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  require(::bind(s.fd(), info.head->ai_addr, info.head->ai_addrlen) == 0, ErrorCode::io,
          "bind " + endpoint.str() + ": " + std::strerror(errno));
  require(::listen(s.fd(), backlog) == 0, ErrorCode::io, std::string("listen: ") + std::strerror(errno));
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  require(::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) == 0, ErrorCode::io, "getsockname failed");
  return ntohs(addr.sin_port);
}

/// Accepts one connection, or returns an invalid socket after `timeout`.
inline Socket accept_tcp(const Socket& listener, Millis timeout) {
  if (!detail::wait_for(listener.fd(), POLLIN, timeout)) return {};
  Socket s(::accept(listener.fd(), nullptr, nullptr));
  if (s.valid()) {
    const int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  return s;
}

inline Socket connect_tcp(const Endpoint& endpoint, Millis timeout) {
  detail::AddrInfo info;
  detail::resolve(endpoint, false, info);
  Socket s(::socket(info.head->ai_family, info.head->ai_socktype | SOCK_NONBLOCK, info.head->ai_protocol));
  require(s.valid(), ErrorCode::io, std::string("socket: ") + std::strerror(errno));
  if (::connect(s.fd(), info.head->ai_addr, info.head->ai_addrlen) != 0) {
    require(errno == EINPROGRESS, ErrorCode::io, "connect " + endpoint.str() + ": " + std::strerror(errno));
    require(detail::wait_for(s.fd(), POLLOUT, timeout), ErrorCode::node_timeout,
            "connect " + endpoint.str() + " timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    require(err == 0, ErrorCode::io, "connect " + endpoint.str() + ": " + std::strerror(err));
  }
  // Back to blocking mode; reads and writes are bounded with poll.
  ::fcntl(s.fd(), F_SETFL, ::fcntl(s.fd(), F_GETFL) & ~O_NONBLOCK);
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Newline-delimited frames over a connected socket.
class LineChannel {
 public:
  enum class Status { line, closed, timeout, too_long };

  explicit LineChannel(Socket socket) : socket_(std::move(socket)) {}

  Socket& socket() { return socket_; }

  bool send_line(std::string_view text) {
    std::string frame(text);
    frame.push_back('\n');
    std::size_t sent = 0;
    while (sent < frame.size()) {
      if (!detail::wait_for(socket_.fd(), POLLOUT, Millis(10000))) return false;
      const ssize_t n = ::send(socket_.fd(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        return false;
      }
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  /// Reads one frame (without the newline) within `timeout`.
  Status read_line(std::string& out, Millis timeout, std::size_t max_bytes = kMaxFrameBytes) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      const auto newline = buffer_.find('\n');
      if (newline != std::string::npos) {
        out.assign(buffer_, 0, newline);
        buffer_.erase(0, newline + 1);
        if (out.size() > max_bytes) return Status::too_long;
        return Status::line;
      }
      if (buffer_.size() > max_bytes) return Status::too_long;
      const auto remaining = std::chrono::duration_cast<Millis>(deadline - Clock::now());
      if (remaining.count() <= 0 || !detail::wait_for(socket_.fd(), POLLIN, remaining)) return Status::timeout;
      char chunk[65536];
      const ssize_t n = ::recv(socket_.fd(), chunk, sizeof chunk, MSG_DONTWAIT);
      if (n == 0) return Status::closed;
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        return Status::closed;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  Socket socket_;
  std::string buffer_;
};

}  // namespace p2e::edgenet
