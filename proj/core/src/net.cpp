#include "tracesim/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace tracesim {
namespace {

sockaddr_in make_addr(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw std::runtime_error("bad IPv4 address: " + host);
  }
  return addr;
}

}  // namespace

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

std::optional<Socket> Socket::connect(const std::string& host, int port,
                                      std::chrono::milliseconds timeout) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return std::nullopt;
  Socket s(fd);

  sockaddr_in addr = make_addr(host, port);
  int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  if (rc != 0) {
    if (errno != EINPROGRESS) return std::nullopt;
    pollfd p{fd, POLLOUT, 0};
    if (poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return std::nullopt;
    int err = 0;
    socklen_t len = sizeof err;
    if (getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0 || err != 0) return std::nullopt;
  }
  fcntl(fd, F_SETFL, flags);

  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

bool Socket::send_all(const void* data, size_t len) {
  const char* p = static_cast<const char*>(data);
  while (len > 0) {
    const ssize_t n = ::send(fd_, p, len, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    p += n;
    len -= static_cast<size_t>(n);
  }
  return true;
}

bool Socket::recv_exact(void* data, size_t len) {
  char* p = static_cast<char*>(data);
  while (len > 0) {
    const ssize_t n = ::recv(fd_, p, len, 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    p += n;
    len -= static_cast<size_t>(n);
  }
  return true;
}

void Socket::set_recv_timeout(std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>(timeout.count() % 1000 * 1000);
  setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(const std::string& host, int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket: " + std::string(strerror(errno)));
  fd_ = Socket(fd);

  int one = 1;
  setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = make_addr(host, port);
  if (bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw std::runtime_error("bind " + host + ":" + std::to_string(port) + ": " +
                             strerror(errno));
  }
  if (listen(fd, 64) != 0) throw std::runtime_error("listen: " + std::string(strerror(errno)));

  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

std::optional<Socket> TcpListener::accept() {
  const int fd = ::accept(fd_.fd(), nullptr, nullptr);
  if (fd < 0) return std::nullopt;
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Socket(fd);
}

void TcpListener::close() {
  fd_.shutdown_both();
  fd_.close();
}

bool write_request_frame(Socket& s, std::uint8_t opcode, std::string_view body) {
  const std::uint32_t len = htonl(static_cast<std::uint32_t>(1 + body.size()));
  std::string buf;
  buf.reserve(5 + body.size());
  buf.append(reinterpret_cast<const char*>(&len), 4);
  buf.push_back(static_cast<char>(opcode));
  buf.append(body);
  return s.send_all(buf.data(), buf.size());
}

std::optional<std::pair<std::uint8_t, std::string>> read_request_frame(Socket& s) {
  std::uint32_t len_be = 0;
  if (!s.recv_exact(&len_be, 4)) return std::nullopt;
  const std::uint32_t len = ntohl(len_be);
  if (len < 1 || len > kMaxFrameBytes) return std::nullopt;
  std::uint8_t opcode = 0;
  if (!s.recv_exact(&opcode, 1)) return std::nullopt;
  std::string body(len - 1, '\0');
  if (len > 1 && !s.recv_exact(body.data(), body.size())) return std::nullopt;
  return std::make_pair(opcode, std::move(body));
}

bool write_response_frame(Socket& s, std::string_view body) {
  const std::uint32_t len = htonl(static_cast<std::uint32_t>(body.size()));
  std::string buf;
  buf.reserve(4 + body.size());
  buf.append(reinterpret_cast<const char*>(&len), 4);
  buf.append(body);
  return s.send_all(buf.data(), buf.size());
}

std::optional<std::string> read_response_frame(Socket& s) {
  std::uint32_t len_be = 0;
  if (!s.recv_exact(&len_be, 4)) return std::nullopt;
  const std::uint32_t len = ntohl(len_be);
  if (len > kMaxFrameBytes) return std::nullopt;
  std::string body(len, '\0');
  if (len > 0 && !s.recv_exact(body.data(), body.size())) return std::nullopt;
  return body;
}

FramedServer::FramedServer(const std::string& host, int port, Handler handler)
    : listener_(host, port), handler_(std::move(handler)) {
  accept_thread_ = std::thread([this] { accept_loop(); });
}

FramedServer::~FramedServer() { stop(); }

void FramedServer::accept_loop() {
  for (;;) {
    auto conn = listener_.accept();
    if (!conn) return;  // listener closed
    auto shared = std::make_shared<Socket>(std::move(*conn));
    std::lock_guard lock(mu_);
    if (stopping_) return;
    conns_.push_back(shared);
    workers_.emplace_back([this, shared] { serve(shared); });
  }
}

void FramedServer::serve(std::shared_ptr<Socket> conn) {
  for (;;) {
    auto req = read_request_frame(*conn);
    if (!req) return;
    const std::string resp = handler_(req->first, req->second);
    if (!write_response_frame(*conn, resp)) return;
  }
}

void FramedServer::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  listener_.close();
  if (accept_thread_.joinable()) accept_thread_.join();

  std::vector<std::shared_ptr<Socket>> conns;
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    conns.swap(conns_);
    workers.swap(workers_);
  }
  for (auto& c : conns) c->shutdown_both();
  for (auto& w : workers) {
    if (w.joinable()) w.join();
  }
}

}  // namespace tracesim
