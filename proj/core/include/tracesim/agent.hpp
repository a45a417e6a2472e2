#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tracesim/broker.hpp"
#include "tracesim/model.hpp"
#include "tracesim/time.hpp"
#include "tracesim/transport.hpp"

namespace tracesim {

struct AgentConfig {
  NodeId id;
  bool start_infected = false;
  RunParameters params;
  double tick_interval = 1.0;  // seconds
  std::uint64_t rng_seed = 0;
  std::string topic = kDefaultTopic;

  void validate() const;
};

struct AgentCounters {
  std::uint64_t reports_published = 0;
  std::uint64_t publish_failures = 0;
  std::uint64_t heard_messages = 0;
  std::uint64_t malformed_messages = 0;
};

/// The per-node behavior as a plain single-activity state machine. The
/// deterministic driver calls the tick phases directly, in order
///   drain_inbox, tick_health, tick_move, tick_broadcast, tick_publish
/// once per simulated second; the threaded Agent wraps the same core in a
/// mutex and drives the phases from the four runtime activities.
class AgentCore {
 public:
  /// Observes every contact fold: (own id, peer id, heard-at). Used by the
  /// harness as delivery ground truth.
  using ContactSink = std::function<void(const NodeId&, const ContactRecord&)>;

  AgentCore(AgentConfig config, Transport* transport, BrokerClient* broker, RunClock* clock);

  // -- listen path -----------------------------------------------------------

  /// Decodes and folds one datagram. Malformed payloads and our own broadcasts
  /// are dropped (the former counted).
  void on_datagram(const Datagram& datagram);

  /// Folds a decoded peer message: the latest arrival per peer within the
  /// current tick wins, and an in-range infected message updates health
  /// immediately.
  void on_heard(const BroadcastMessage& msg, Timestamp heard_at);

  /// Closes the tick's hearing window: surviving per-peer entries become
  /// ContactRecords, oldest first.
  void fold_contacts();

  /// drain_inbox = receive everything pending, then fold_contacts.
  void drain_inbox();

  // -- per-tick phases --------------------------------------------------------

  void tick_health();     // time-based transitions; flags death once age >= lifetime
  void tick_move();       // one cardinal step unless stationary or dying
  void tick_broadcast();  // current state; alive=false exactly once, when dying
  void tick_publish();    // probe, then publish the next report or buffer it

  bool terminated() const { return terminated_; }

  /// Unexpected shutdown: no final message, nothing flushed.
  void kill() { terminated_ = true; }

  // -- inspection -------------------------------------------------------------

  const NodeId& id() const { return config_.id; }
  Position position() const { return position_; }
  const HealthPhase& phase() const { return phase_; }
  bool infected() const { return is_stationary(phase_); }
  bool dying() const { return dying_; }
  const AgentCounters& counters() const { return counters_; }
  const AgentConfig& config() const { return config_; }

  void set_contact_sink(ContactSink sink) { contact_sink_ = std::move(sink); }
  void set_broker_available(bool available) { broker_available_ = available; }
  bool broker_available() const { return broker_available_; }

  BroadcastMessage current_broadcast() const;

  /// The report that would be published now: current state plus carried-over
  /// and this-tick contacts, oldest first.
  ReportMessage next_report() const;

  /// Contacts held but not yet acknowledged by the broker (outage carry-over
  /// plus the current tick's fold).
  std::vector<ContactRecord> unpublished_contacts() const;

 private:
  SimMicros now_rel() const { return clock_->elapsed(); }
  bool death_due() const;

  AgentConfig config_;
  Transport* transport_;
  BrokerClient* broker_;
  RunClock* clock_;
  RngEngine move_rng_;

  Position position_;
  HealthPhase phase_;
  SimMicros spawned_at_ = 0;
  bool dying_ = false;       // this tick emits the final alive=false messages
  bool terminated_ = false;  // no further activity

  struct Heard {
    Timestamp at;
    BroadcastMessage msg;
  };
  std::map<NodeId, Heard> last_heard_;            // current tick only
  std::vector<ContactRecord> pending_contacts_;   // folded this tick
  std::vector<ContactRecord> carried_contacts_;   // survived failed publishes
  bool broker_available_ = true;

  ContactSink contact_sink_;
  AgentCounters counters_;
};

/// Realtime agent: the four concurrent activities (control, broadcast loop,
/// listen loop, broker monitor) over one AgentCore. State is mutated under a
/// single mutex; no lock is held across a network call.
class Agent {
 public:
  Agent(AgentConfig config, std::unique_ptr<Transport> transport,
        std::unique_ptr<BrokerClient> broker, RunClock* clock);
  ~Agent();

  void start();
  /// Graceful halt without a final message (the final message marks natural
  /// death only). Joins all activities.
  void stop();
  /// Models an unexpected shutdown: threads are stopped, no final message.
  void kill();

  bool finished() const { return finished_; }

  /// Only meaningful once stopped or finished.
  const AgentCore& core() const { return core_; }
  AgentCore& core() { return core_; }
  std::mutex& mutex() { return mu_; }

 private:
  void control_loop();
  void broadcast_loop();
  void listen_loop();
  void monitor_loop();
  bool sleep_tick();

  AgentConfig config_;
  std::unique_ptr<Transport> transport_;
  std::unique_ptr<BrokerClient> broker_;
  AgentCore core_;

  std::mutex mu_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> finished_{false};
  std::vector<std::thread> threads_;
};

}  // namespace tracesim
