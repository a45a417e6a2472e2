#include "tracesim/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

#include "tracesim/log.hpp"

namespace tracesim {

void TransportConfig::validate() const {
  if (broadcast_port < 1024 || broadcast_port > 65535) {
    throw std::invalid_argument("broadcast_port must be in [1024, 65535]");
  }
  if (loss_probability < 0.0 || loss_probability > 1.0) {
    throw std::invalid_argument("loss_probability must be in [0, 1]");
  }
  if (hearing_radius && *hearing_radius < 0) {
    throw std::invalid_argument("hearing_radius must be >= 0");
  }
}

InMemoryNetwork::InMemoryNetwork(TransportConfig config, std::uint64_t loss_seed)
    : config_(std::move(config)), loss_rng_(loss_seed) {
  config_.validate();
}

bool InMemoryNetwork::register_peer(const NodeId& id, PositionSource position_source) {
  std::lock_guard lock(mu_);
  return peers_.emplace(id, Mailbox{std::move(position_source), {}}).second;
}

void InMemoryNetwork::unregister_peer(const NodeId& id) {
  std::lock_guard lock(mu_);
  peers_.erase(id);
}

void InMemoryNetwork::set_delivery_recorder(DeliveryRecorder recorder) {
  std::lock_guard lock(mu_);
  recorder_ = std::move(recorder);
}

bool InMemoryNetwork::broadcast_from(const NodeId& sender, std::string_view payload) {
  if (payload.size() > kMaxDatagramBytes) return false;

  std::lock_guard lock(mu_);
  ++broadcasts_;
  auto sender_it = peers_.find(sender);
  // Sender position is sampled once, at send time.
  std::optional<Position> sender_pos;
  if (sender_it != peers_.end() && sender_it->second.position) {
    sender_pos = sender_it->second.position();
  }

  const Endpoint from{"mem." + sender.substr(0, 8), config_.broadcast_port};
  for (auto& [id, box] : peers_) {
    if (id == sender) continue;
    if (config_.hearing_radius && sender_pos && box.position &&
        !in_infection_range(*sender_pos, box.position(), *config_.hearing_radius)) {
      continue;
    }
    if (config_.loss_probability > 0.0) {
      const double draw =
          static_cast<double>(loss_rng_()) / static_cast<double>(RngEngine::max());
      if (draw < config_.loss_probability) continue;
    }
    box.queue.push_back(Datagram{std::string(payload), from});
    ++delivered_;
    if (recorder_) recorder_(sender, id, payload);
  }
  cv_.notify_all();
  return true;
}

std::optional<Datagram> InMemoryNetwork::receive_for(const NodeId& id,
                                                     std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  auto ready = [&]() -> Mailbox* {
    auto it = peers_.find(id);
    return (it != peers_.end() && !it->second.queue.empty()) ? &it->second : nullptr;
  };
  Mailbox* box = ready();
  if (!box && timeout.count() > 0) {
    cv_.wait_for(lock, timeout, [&] { return ready() != nullptr; });
    box = ready();
  }
  if (!box) return std::nullopt;
  Datagram d = std::move(box->queue.front());
  box->queue.pop_front();
  return d;
}

std::uint64_t InMemoryNetwork::broadcasts_sent() const {
  std::lock_guard lock(mu_);
  return broadcasts_;
}

std::uint64_t InMemoryNetwork::datagrams_delivered() const {
  std::lock_guard lock(mu_);
  return delivered_;
}

UdpTransport::UdpTransport(const TransportConfig& config, const std::string& broadcast_address)
    : broadcast_port_(config.broadcast_port), broadcast_address_(broadcast_address) {
  config.validate();

  send_fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  recv_fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (send_fd_ < 0 || recv_fd_ < 0) throw std::runtime_error("udp socket: " + std::string(strerror(errno)));

  int one = 1;
  setsockopt(send_fd_, SOL_SOCKET, SO_BROADCAST, &one, sizeof one);
  // The send socket gets its ephemeral port on first sendto; bind it now so
  // the port is known for self-filtering.
  sockaddr_in any{};
  any.sin_family = AF_INET;
  any.sin_addr.s_addr = htonl(INADDR_ANY);
  any.sin_port = 0;
  if (bind(send_fd_, reinterpret_cast<sockaddr*>(&any), sizeof any) != 0) {
    throw std::runtime_error("udp bind(send): " + std::string(strerror(errno)));
  }
  sockaddr_in bound{};
  socklen_t blen = sizeof bound;
  getsockname(send_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  send_port_ = ntohs(bound.sin_port);

  setsockopt(recv_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  setsockopt(recv_fd_, SOL_SOCKET, SO_REUSEPORT, &one, sizeof one);
  any.sin_port = htons(static_cast<std::uint16_t>(broadcast_port_));
  if (bind(recv_fd_, reinterpret_cast<sockaddr*>(&any), sizeof any) != 0) {
    throw std::runtime_error("udp bind(" + std::to_string(broadcast_port_) +
                             "): " + std::string(strerror(errno)));
  }
}

UdpTransport::~UdpTransport() {
  if (send_fd_ >= 0) ::close(send_fd_);
  if (recv_fd_ >= 0) ::close(recv_fd_);
}

bool UdpTransport::broadcast(std::string_view payload) {
  if (payload.size() > kMaxDatagramBytes) return false;
  sockaddr_in dst{};
  dst.sin_family = AF_INET;
  dst.sin_port = htons(static_cast<std::uint16_t>(broadcast_port_));
  if (inet_pton(AF_INET, broadcast_address_.c_str(), &dst.sin_addr) != 1) return false;
  const ssize_t n = sendto(send_fd_, payload.data(), payload.size(), 0,
                           reinterpret_cast<sockaddr*>(&dst), sizeof dst);
  if (n < 0) {
    log_warn(std::string("udp broadcast failed: ") + strerror(errno));
    return false;
  }
  return true;
}

std::optional<Datagram> UdpTransport::receive(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() < 0) remaining = std::chrono::milliseconds(0);

    pollfd p{recv_fd_, POLLIN, 0};
    const int rc = poll(&p, 1, static_cast<int>(remaining.count()));
    if (rc <= 0) return std::nullopt;

    char buf[kMaxDatagramBytes + 1];
    sockaddr_in from{};
    socklen_t flen = sizeof from;
    const ssize_t n =
        recvfrom(recv_fd_, buf, sizeof buf, 0, reinterpret_cast<sockaddr*>(&from), &flen);
    if (n < 0) {
      if (errno == EINTR) continue;
      return std::nullopt;
    }

    char addr[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &from.sin_addr, addr, sizeof addr);
    const int from_port = ntohs(from.sin_port);
    // Drop our own datagrams; broadcast loops them back to every listener on
    // the host, including us.
    if (from_port == send_port_) continue;

    return Datagram{std::string(buf, static_cast<size_t>(n)), Endpoint{addr, from_port}};
  }
}

}  // namespace tracesim
