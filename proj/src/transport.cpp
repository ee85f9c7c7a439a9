#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "pamod/coordinator.hpp"
#include "pamod/error.hpp"

namespace pamod {

Endpoint Endpoint::parse(const std::string& text) {
  Endpoint e;
  std::string port = text;
  const auto colon = text.rfind(':');
  if (colon != std::string::npos) {
    if (colon > 0) e.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    e.port = std::stoi(port, &used);
    if (used != port.size()) throw std::invalid_argument(port);
  } catch (const std::exception&) {
    throw ValidationError("bad endpoint '" + text + "', expected host:port");
  }
  if (e.port < 0 || e.port > 65535) throw ValidationError("port out of range in '" + text + "'");
  return e;
}

namespace {

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    std::swap(fd_, o.fd_);
    return *this;
  }
  Socket(const Socket&) = delete;
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd() const { return fd_; }

 private:
  int fd_;
};

[[noreturn]] void fail(const std::string& what) { throw TransportError(what + ": " + std::strerror(errno)); }

void wait_for(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  int r;
  do r = ::poll(&p, 1, timeout_ms);
  while (r < 0 && errno == EINTR);
  if (r < 0) fail("poll");
  if (r == 0) throw TransportError("timed out after " + std::to_string(timeout_ms) + " ms");
}

void write_all(int fd, const char* data, std::size_t n, int timeout_ms) {
  while (n > 0) {
    wait_for(fd, POLLOUT, timeout_ms);
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail("send");
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, char* data, std::size_t n, int timeout_ms) {
  while (n > 0) {
    wait_for(fd, POLLIN, timeout_ms);
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) throw TransportError("peer closed the connection");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail("recv");
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

constexpr std::uint32_t kMaxFrame = 64u << 20;

void send_frame(int fd, const std::string& frame, int timeout_ms) {
  if (frame.size() > kMaxFrame) throw TransportError("frame too large");
  const std::uint32_t n = htonl(static_cast<std::uint32_t>(frame.size()));
  char header[4];
  std::memcpy(header, &n, 4);
  write_all(fd, header, 4, timeout_ms);
  write_all(fd, frame.data(), frame.size(), timeout_ms);
}

std::string recv_frame(int fd, int timeout_ms) {
  char header[4];
  read_all(fd, header, 4, timeout_ms);
  std::uint32_t n;
  std::memcpy(&n, header, 4);
  n = ntohl(n);
  if (n > kMaxFrame) throw TransportError("frame length " + std::to_string(n) + " exceeds the limit");
  std::string frame(n, '\0');
  read_all(fd, frame.data(), n, timeout_ms);
  return frame;
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve " + ep.host + ": " + gai_strerror(rc));
  return res;
}

// Runs one side of the protocol over a connected socket. Every received frame
// is schema-checked before it reaches the agent.
std::vector<std::string> run_role(int fd, Role role, TsoAgent* tso, IsoAgent* iso, const TransportOptions& opt,
                                  std::vector<std::string>* partial) {
  std::vector<std::string> local;
  auto& log = partial ? *partial : local;
  log.clear();
  auto out = [&](const std::string& f) {
    send_frame(fd, f, opt.timeout_ms);
    log.push_back(f);
  };
  auto in = [&] {
    log.push_back(recv_frame(fd, opt.timeout_ms));
    return log.back();
  };
  if (role == Role::Iso) {
    if (!iso) throw ValidationError("ISO role needs an ISO agent");
    out(encode(iso->open()));
    while (!iso->finished()) out(encode(iso->respond(decode_schedule(in()))));
  } else {
    if (!tso) throw ValidationError("TSO role needs a TSO agent");
    while (true) {
      const auto schedule = tso->respond(decode_price(in()));
      if (!schedule) break;
      out(encode(*schedule));
    }
  }
  return log;
}

}  // namespace

std::vector<std::string> serve_agent(Role role, TsoAgent* tso, IsoAgent* iso, const Endpoint& endpoint,
                                     const TransportOptions& options, std::vector<std::string>* partial,
                                     const std::function<void(int)>& on_listen) {
  addrinfo* res = resolve(endpoint, true);
  Socket listener(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (listener.fd() < 0) {
    ::freeaddrinfo(res);
    fail("socket");
  }
  const int yes = 1;
  ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  const int rc = ::bind(listener.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0) fail("bind " + endpoint.host + ":" + std::to_string(endpoint.port));
  if (::listen(listener.fd(), 1) < 0) fail("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  const int port = ntohs(bound.sin_port);
  spdlog::info("listening on {}:{}", endpoint.host, port);
  if (on_listen) on_listen(port);
  wait_for(listener.fd(), POLLIN, options.timeout_ms);
  Socket peer(::accept(listener.fd(), nullptr, nullptr));
  if (peer.fd() < 0) fail("accept");
  ::setsockopt(peer.fd(), IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
  return run_role(peer.fd(), role, tso, iso, options, partial);
}

std::vector<std::string> connect_agent(Role role, TsoAgent* tso, IsoAgent* iso, const Endpoint& endpoint,
                                       const TransportOptions& options, std::vector<std::string>* partial) {
  int delay = std::max(1, options.retry_delay_ms);
  for (int attempt = 1;; ++attempt) {
    addrinfo* res = resolve(endpoint, false);
    Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    const int rc = s.fd() < 0 ? -1 : ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
    const int err = errno;
    ::freeaddrinfo(res);
    if (rc == 0) {
      const int yes = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
      return run_role(s.fd(), role, tso, iso, options, partial);
    }
    if (attempt >= std::max(1, options.retries))
      throw TransportError("cannot connect to " + endpoint.host + ":" + std::to_string(endpoint.port) + " after " +
                           std::to_string(attempt) + " attempts: " + std::strerror(err));
    spdlog::debug("connect attempt {} failed ({}), retrying in {} ms", attempt, std::strerror(err), delay);
    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    delay = std::min(delay * 2, 1000);
  }
}

}  // namespace pamod
