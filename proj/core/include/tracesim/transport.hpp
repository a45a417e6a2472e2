#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tracesim/model.hpp"
#include "tracesim/rng.hpp"

namespace tracesim {

enum class TransportMode { Udp, InMemory };

struct TransportConfig {
  TransportMode mode = TransportMode::InMemory;
  int broadcast_port = 4711;
  // Unlimited when unset. In-memory peers out of this radius at send time
  // never receive the datagram.
  std::optional<double> hearing_radius;
  double loss_probability = 0.0;  // InMemory only

  void validate() const;  // throws std::invalid_argument
};

struct Endpoint {
  std::string address;
  int port = 0;

  std::string to_text() const { return address + ":" + std::to_string(port); }
  bool operator==(const Endpoint&) const = default;
};

struct Datagram {
  std::string payload;
  Endpoint from;
};

inline constexpr size_t kMaxDatagramBytes = 60000;

/// One agent's view of the network: fire-and-forget broadcast out, datagrams
/// in. broadcast() and receive() may be driven by two concurrent activities.
class Transport {
 public:
  virtual ~Transport() = default;

  /// Sends to every reachable peer; no acknowledgment. Returns false on a
  /// local send failure (oversized payload, socket error); the caller carries
  /// on next tick.
  virtual bool broadcast(std::string_view payload) = 0;

  /// Next pending datagram, or nullopt once `timeout` elapses. Own broadcasts
  /// are never surfaced.
  virtual std::optional<Datagram> receive(std::chrono::milliseconds timeout) = 0;
};

/// Deterministic replacement for the broadcast domain: a hub every in-process
/// agent registers with. Reachability is evaluated against peer positions at
/// send time; losses are drawn from a seeded engine.
class InMemoryNetwork {
 public:
  using PositionSource = std::function<Position()>;
  /// Invoked for every actual delivery (after radius and loss filtering).
  using DeliveryRecorder =
      std::function<void(const NodeId& sender, const NodeId& receiver, std::string_view payload)>;

  explicit InMemoryNetwork(TransportConfig config, std::uint64_t loss_seed = 0);

  /// Fails (returns false) on a duplicate id.
  bool register_peer(const NodeId& id, PositionSource position_source);
  void unregister_peer(const NodeId& id);

  void set_delivery_recorder(DeliveryRecorder recorder);

  bool broadcast_from(const NodeId& sender, std::string_view payload);
  std::optional<Datagram> receive_for(const NodeId& id, std::chrono::milliseconds timeout);

  std::uint64_t broadcasts_sent() const;
  std::uint64_t datagrams_delivered() const;

 private:
  struct Mailbox {
    PositionSource position;
    std::deque<Datagram> queue;
  };

  TransportConfig config_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<NodeId, Mailbox> peers_;
  RngEngine loss_rng_;
  DeliveryRecorder recorder_;
  std::uint64_t broadcasts_ = 0;
  std::uint64_t delivered_ = 0;
};

/// Agent-side handle onto an InMemoryNetwork.
class InMemoryTransport final : public Transport {
 public:
  InMemoryTransport(std::shared_ptr<InMemoryNetwork> net, NodeId id)
      : net_(std::move(net)), id_(std::move(id)) {}

  bool broadcast(std::string_view payload) override { return net_->broadcast_from(id_, payload); }
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override {
    return net_->receive_for(id_, timeout);
  }

 private:
  std::shared_ptr<InMemoryNetwork> net_;
  NodeId id_;
};

/// Real UDP broadcast on the local network. Sends leave from an ephemeral
/// source port; the receive socket binds the shared broadcast port with
/// SO_REUSEPORT so several agents can coexist on one host. Datagrams from our
/// own source endpoint are dropped.
class UdpTransport final : public Transport {
 public:
  explicit UdpTransport(const TransportConfig& config,
                        const std::string& broadcast_address = "127.255.255.255");
  ~UdpTransport() override;

  bool broadcast(std::string_view payload) override;
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override;

  int send_port() const { return send_port_; }

 private:
  int send_fd_ = -1;
  int recv_fd_ = -1;
  int send_port_ = 0;
  int broadcast_port_ = 0;
  std::string broadcast_address_;
};

}  // namespace tracesim
