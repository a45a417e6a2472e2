#include "tracesim/agent.hpp"

#include <algorithm>
#include <stdexcept>

#include "tracesim/log.hpp"
#include "tracesim/wire.hpp"

namespace tracesim {

void AgentConfig::validate() const {
  if (!is_valid_node_id(id)) throw std::invalid_argument("agent id is not a canonical uuid");
  if (tick_interval <= 0) throw std::invalid_argument("tick_interval must be > 0");
  params.validate();
}

AgentCore::AgentCore(AgentConfig config, Transport* transport, BrokerClient* broker,
                     RunClock* clock)
    : config_(std::move(config)),
      transport_(transport),
      broker_(broker),
      clock_(clock),
      move_rng_(config_.rng_seed) {
  config_.validate();
  position_.x = static_cast<int>(move_rng_() % static_cast<std::uint64_t>(config_.params.field_width));
  position_.y = static_cast<int>(move_rng_() % static_cast<std::uint64_t>(config_.params.field_height));
  spawned_at_ = clock_->elapsed();
  if (config_.start_infected) {
    phase_ = Infected{spawned_at_};
  } else {
    phase_ = Safe{};
  }
}

void AgentCore::on_datagram(const Datagram& datagram) {
  BroadcastMessage msg;
  try {
    msg = decode_broadcast(datagram.payload);
  } catch (const WireError& e) {
    ++counters_.malformed_messages;
    log_warn("node " + config_.id.substr(0, 8) + " dropped malformed datagram from " +
             datagram.from.to_text() + " (" + e.what() + ")");
    return;
  }
  if (msg.uuid == config_.id) return;  // our own broadcast looped back
  log_info("node " + config_.id.substr(0, 8) + " heard " + msg.uuid.substr(0, 8) + " from " +
           datagram.from.to_text());
  on_heard(msg, clock_->now());
}

void AgentCore::on_heard(const BroadcastMessage& msg, Timestamp heard_at) {
  if (msg.uuid == config_.id || terminated_) return;
  ++counters_.heard_messages;
  last_heard_[msg.uuid] = Heard{heard_at, msg};  // later arrival wins within the tick

  if (msg.infected &&
      in_infection_range(position_, msg.position, config_.params.infection_radius)) {
    phase_ = update_health(phase_, now_rel(), true, config_.params);
  }
}

void AgentCore::fold_contacts() {
  if (last_heard_.empty()) return;
  std::vector<const std::pair<const NodeId, Heard>*> entries;
  entries.reserve(last_heard_.size());
  for (const auto& e : last_heard_) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(), [](const auto* a, const auto* b) {
    if (a->second.at != b->second.at) return a->second.at < b->second.at;
    return a->first < b->first;
  });
  for (const auto* e : entries) {
    ContactRecord record{e->first, e->second.at};
    if (contact_sink_) contact_sink_(config_.id, record);
    pending_contacts_.push_back(std::move(record));
  }
  last_heard_.clear();
}

void AgentCore::drain_inbox() {
  if (terminated_) return;
  while (auto d = transport_->receive(std::chrono::milliseconds(0))) {
    on_datagram(*d);
  }
  fold_contacts();
}

bool AgentCore::death_due() const {
  const SimMicros lifetime =
      static_cast<SimMicros>(config_.params.zombie_lifetime) * kMicrosPerSecond;
  return now_rel() - spawned_at_ >= lifetime;
}

void AgentCore::tick_health() {
  if (terminated_) return;
  if (death_due()) {
    dying_ = true;
    return;
  }
  phase_ = update_health(phase_, now_rel(), false, config_.params);
}

void AgentCore::tick_move() {
  if (terminated_ || dying_) return;
  if (is_stationary(phase_)) return;
  position_ = step_position(position_, config_.params, move_rng_);
}

BroadcastMessage AgentCore::current_broadcast() const {
  BroadcastMessage m;
  m.uuid = config_.id;
  m.position = position_;
  m.infected = is_stationary(phase_);
  m.timestamp = clock_->now();
  m.alive = !dying_;
  return m;
}

void AgentCore::tick_broadcast() {
  if (terminated_) return;
  transport_->broadcast(encode_broadcast(current_broadcast()));
}

ReportMessage AgentCore::next_report() const {
  ReportMessage r;
  static_cast<BroadcastMessage&>(r) = current_broadcast();
  r.contacts.reserve(carried_contacts_.size() + pending_contacts_.size());
  r.contacts = carried_contacts_;
  r.contacts.insert(r.contacts.end(), pending_contacts_.begin(), pending_contacts_.end());
  return r;
}

std::vector<ContactRecord> AgentCore::unpublished_contacts() const {
  std::vector<ContactRecord> out = carried_contacts_;
  out.insert(out.end(), pending_contacts_.begin(), pending_contacts_.end());
  return out;
}

void AgentCore::tick_publish() {
  if (terminated_) return;

  // The monitor activity: one availability probe per tick. A failed publish
  // also flips the flag, so the next ticks skip straight to buffering.
  broker_available_ = broker_->probe();

  ReportMessage report = next_report();
  bool published = false;
  if (broker_available_) {
    published = broker_->publish(config_.topic, encode_report(report)).has_value();
  }

  if (published) {
    ++counters_.reports_published;
    carried_contacts_.clear();
    pending_contacts_.clear();
  } else {
    ++counters_.publish_failures;
    broker_available_ = false;
    // Contacts survive the outage; the report's position does not.
    carried_contacts_ = std::move(report.contacts);
    pending_contacts_.clear();
  }

  if (dying_) terminated_ = true;  // the alive=false report was its last word
}

Agent::Agent(AgentConfig config, std::unique_ptr<Transport> transport,
             std::unique_ptr<BrokerClient> broker, RunClock* clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      broker_(std::move(broker)),
      core_(config_, transport_.get(), broker_.get(), clock) {}

Agent::~Agent() { stop(); }

void Agent::start() {
  threads_.emplace_back([this] { control_loop(); });
  threads_.emplace_back([this] { broadcast_loop(); });
  threads_.emplace_back([this] { listen_loop(); });
  threads_.emplace_back([this] { monitor_loop(); });
}

bool Agent::sleep_tick() {
  const auto interval =
      std::chrono::microseconds(static_cast<std::int64_t>(config_.tick_interval * 1e6));
  const auto deadline = std::chrono::steady_clock::now() + interval;
  while (std::chrono::steady_clock::now() < deadline) {
    if (stop_.load()) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return !stop_.load();
}

void Agent::control_loop() {
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (core_.terminated()) break;
      core_.fold_contacts();
      core_.tick_health();
      core_.tick_move();
    }
    // tick_publish performs the probe + publish round-trips itself; keeping
    // the lock here would stall the listen loop for their duration, which is
    // acceptable at one short round-trip per second on loopback.
    {
      std::lock_guard lock(mu_);
      core_.tick_publish();
      if (core_.terminated()) break;
    }
    if (!sleep_tick()) break;
  }
  finished_ = true;
}

void Agent::broadcast_loop() {
  for (;;) {
    std::string payload;
    {
      std::lock_guard lock(mu_);
      if (core_.terminated()) {
        // Natural death also says goodbye to the neighbors.
        if (core_.dying()) transport_->broadcast(encode_broadcast(core_.current_broadcast()));
        return;
      }
      payload = encode_broadcast(core_.current_broadcast());
    }
    transport_->broadcast(payload);
    if (!sleep_tick()) return;
  }
}

void Agent::listen_loop() {
  while (!stop_.load()) {
    auto d = transport_->receive(std::chrono::milliseconds(100));
    if (!d) continue;
    std::lock_guard lock(mu_);
    if (core_.terminated()) return;
    core_.on_datagram(*d);
  }
}

void Agent::monitor_loop() {
  while (!stop_.load()) {
    const bool up = broker_->probe();
    {
      std::lock_guard lock(mu_);
      core_.set_broker_available(up);
    }
    if (!sleep_tick()) return;
  }
}

void Agent::stop() {
  stop_.store(true);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

void Agent::kill() {
  {
    std::lock_guard lock(mu_);
    core_.kill();
  }
  stop();
}

}  // namespace tracesim
