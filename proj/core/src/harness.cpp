#include "tracesim/harness.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tracesim/agent.hpp"
#include "tracesim/api.hpp"
#include "tracesim/broker.hpp"
#include "tracesim/consumer.hpp"
#include "tracesim/log.hpp"
#include "tracesim/wire.hpp"

namespace tracesim {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const char* target_name(FaultTarget t) {
  switch (t) {
    case FaultTarget::Broker: return "broker";
    case FaultTarget::Consumer: return "consumer";
    case FaultTarget::Store: return "store";
    case FaultTarget::Api: return "api";
    case FaultTarget::Node: return "node";
  }
  return "?";
}

const char* action_name(FaultAction a) {
  switch (a) {
    case FaultAction::Kill: return "kill";
    case FaultAction::Restore: return "restore";
    case FaultAction::Spawn: return "spawn";
  }
  return "?";
}

}  // namespace

std::string FaultEvent::to_text() const {
  std::string out = std::string(action_name(action)) + ":" + target_name(target);
  if (target == FaultTarget::Node && action == FaultAction::Kill) {
    out += ":" + std::to_string(node_index);
  }
  if (action == FaultAction::Spawn && spawn_infected) out += ":infected";
  out += "@" + std::to_string(at_seconds);
  return out;
}

FaultEvent parse_fault(const std::string& text) {
  const auto at_pos = text.rfind('@');
  if (at_pos == std::string::npos) {
    throw std::invalid_argument("fault '" + text + "': missing @seconds");
  }
  FaultEvent ev;
  try {
    ev.at_seconds = std::stoll(text.substr(at_pos + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("fault '" + text + "': bad seconds");
  }

  std::vector<std::string> parts;
  std::stringstream ss(text.substr(0, at_pos));
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.size() < 2) throw std::invalid_argument("fault '" + text + "': want action:target");

  if (parts[0] == "kill") ev.action = FaultAction::Kill;
  else if (parts[0] == "restore") ev.action = FaultAction::Restore;
  else if (parts[0] == "spawn") ev.action = FaultAction::Spawn;
  else throw std::invalid_argument("fault '" + text + "': unknown action '" + parts[0] + "'");

  if (parts[1] == "broker") ev.target = FaultTarget::Broker;
  else if (parts[1] == "consumer") ev.target = FaultTarget::Consumer;
  else if (parts[1] == "store") ev.target = FaultTarget::Store;
  else if (parts[1] == "api") ev.target = FaultTarget::Api;
  else if (parts[1] == "node") ev.target = FaultTarget::Node;
  else throw std::invalid_argument("fault '" + text + "': unknown target '" + parts[1] + "'");

  if (parts.size() > 2) {
    if (ev.action == FaultAction::Spawn && parts[2] == "infected") {
      ev.spawn_infected = true;
    } else if (ev.target == FaultTarget::Node && ev.action == FaultAction::Kill) {
      ev.node_index = std::stoi(parts[2]);
    } else {
      throw std::invalid_argument("fault '" + text + "': unexpected ':" + parts[2] + "'");
    }
  }
  if (ev.target == FaultTarget::Node && ev.action == FaultAction::Kill && ev.node_index < 0) {
    throw std::invalid_argument("fault '" + text + "': kill:node needs an index");
  }
  return ev;
}

void RunSpec::validate() const {
  params.validate();
  transport.validate();
  if (node_count < 0) throw std::invalid_argument("node_count must be >= 0");
  if (infected_count < 0 || infected_count > node_count) {
    throw std::invalid_argument("infected_count must be in [0, node_count]");
  }
  if (duration_seconds < 1) throw std::invalid_argument("duration_seconds must be >= 1");
  if (tick_interval <= 0) throw std::invalid_argument("tick_interval must be > 0");
  if (mode == RunMode::Deterministic && transport.mode != TransportMode::InMemory) {
    throw std::invalid_argument("deterministic mode requires the in-memory transport");
  }

  // Kill/Restore must alternate per target; node spawns extend the index
  // space as they appear.
  std::map<std::string, bool> down;
  int known_nodes = node_count;
  std::vector<FaultEvent> ordered = faults;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const FaultEvent& a, const FaultEvent& b) { return a.at_seconds < b.at_seconds; });
  for (const auto& ev : ordered) {
    if (ev.at_seconds < 0 || ev.at_seconds >= duration_seconds) {
      throw std::invalid_argument("fault " + ev.to_text() + ": outside the run window");
    }
    if (ev.action == FaultAction::Spawn) {
      if (ev.target != FaultTarget::Node) {
        throw std::invalid_argument("fault " + ev.to_text() + ": only nodes can be spawned");
      }
      ++known_nodes;
      continue;
    }
    if (ev.target == FaultTarget::Node) {
      if (ev.action == FaultAction::Restore) {
        throw std::invalid_argument("fault " + ev.to_text() + ": a dead node stays dead");
      }
      if (ev.node_index < 0 || ev.node_index >= known_nodes) {
        throw std::invalid_argument("fault " + ev.to_text() + ": node index out of range");
      }
      continue;
    }
    const std::string key = target_name(ev.target);
    const bool is_down = down[key];
    if (ev.action == FaultAction::Kill && is_down) {
      throw std::invalid_argument("fault " + ev.to_text() + ": already down");
    }
    if (ev.action == FaultAction::Restore && !is_down) {
      throw std::invalid_argument("fault " + ev.to_text() + ": restore without a kill");
    }
    down[key] = ev.action == FaultAction::Kill;
  }
}

std::uint64_t SizeHistogram::samples() const {
  std::uint64_t n = 0;
  for (const auto& [_, c] : counts) n += c;
  return n;
}

std::uint64_t SizeHistogram::min() const { return counts.empty() ? 0 : counts.begin()->first; }

std::uint64_t SizeHistogram::max() const { return counts.empty() ? 0 : counts.rbegin()->first; }

std::uint64_t SizeHistogram::total() const {
  std::uint64_t t = 0;
  for (const auto& [size, c] : counts) t += size * c;
  return t;
}

double SizeHistogram::mean() const {
  const auto n = samples();
  return n == 0 ? 0.0 : static_cast<double>(total()) / static_cast<double>(n);
}

void TrafficMetrics::finalize() {
  total_bytes_sent = broadcast_payload_bytes.total() +
                     broadcast_payload_bytes.samples() * kDatagramHeaderOverheadBytes +
                     report_wire_bytes.total();
  per_node_per_second_bytes =
      broadcast_payload_bytes.mean() + static_cast<double>(kDatagramHeaderOverheadBytes) +
      static_cast<double>(report_wire_bytes.max());
}

static ordered_json histogram_to_json(const SizeHistogram& h) {
  ordered_json j;
  j["samples"] = h.samples();
  j["min"] = h.min();
  j["max"] = h.max();
  j["mean"] = h.mean();
  ordered_json buckets = ordered_json::object();
  for (const auto& [size, count] : h.counts) buckets[std::to_string(size)] = count;
  j["counts"] = std::move(buckets);
  return j;
}

ordered_json TrafficMetrics::to_json() const {
  ordered_json j;
  j["broadcast_payload_bytes"] = histogram_to_json(broadcast_payload_bytes);
  j["report_wire_bytes"] = histogram_to_json(report_wire_bytes);
  j["header_overhead_bytes"] = kDatagramHeaderOverheadBytes;
  j["total_bytes_sent"] = total_bytes_sent;
  j["per_node_per_second_bytes"] = per_node_per_second_bytes;
  return j;
}

std::vector<TrafficComparisonRow> traffic_comparison(const TrafficMetrics& metrics,
                                                     int node_count,
                                                     std::int64_t duration_seconds) {
  std::vector<TrafficComparisonRow> rows;

  const double payload_max = static_cast<double>(metrics.broadcast_payload_bytes.max());
  const double payload_min = static_cast<double>(metrics.broadcast_payload_bytes.min());
  {
    TrafficComparisonRow row;
    row.name = "broadcast payload bytes";
    row.measured = payload_max;
    row.reference = kReferenceBroadcastPayloadBytes;
    row.band_lo = kReferenceBroadcastPayloadBytes - 20;
    row.band_hi = kReferenceBroadcastPayloadBytes + 20;
    row.passed = payload_min >= row.band_lo && payload_max <= row.band_hi &&
                 metrics.broadcast_payload_bytes.samples() > 0;
    rows.push_back(row);
  }
  {
    TrafficComparisonRow row;
    row.name = "broadcast framed bytes";
    row.measured = payload_max + static_cast<double>(kDatagramHeaderOverheadBytes);
    row.reference = kReferenceBroadcastFramedBytes;
    row.band_lo = kReferenceBroadcastFramedBytes - 20;
    row.band_hi = kReferenceBroadcastFramedBytes + 20;
    row.passed = row.measured >= row.band_lo && row.measured <= row.band_hi &&
                 metrics.broadcast_payload_bytes.samples() > 0;
    rows.push_back(row);
  }
  {
    TrafficComparisonRow row;
    row.name = "worst-case report wire bytes";
    row.measured = static_cast<double>(metrics.report_wire_bytes.max());
    row.reference = kReferenceWorstReportBytes;
    row.band_lo = kReferenceWorstReportBytes * 0.8;
    row.band_hi = kReferenceWorstReportBytes * 1.2;
    row.passed = row.measured >= row.band_lo && row.measured <= row.band_hi;
    rows.push_back(row);
  }
  {
    TrafficComparisonRow row;
    row.name = "extrapolated total bytes";
    row.measured = static_cast<double>(node_count) * static_cast<double>(duration_seconds) *
                   metrics.per_node_per_second_bytes;
    row.reference = kReferenceTotalBytes20Nodes120s;
    row.band_lo = kReferenceTotalBytes20Nodes120s * 0.8;
    row.band_hi = kReferenceTotalBytes20Nodes120s * 1.2;
    row.passed = row.measured >= row.band_lo && row.measured <= row.band_hi;
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::string> read_topic_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::vector<std::string> payloads;
  size_t pos = 0;
  while (pos < raw.size()) {
    if (pos + 4 > raw.size()) {
      throw std::runtime_error("torn frame header at byte offset " + std::to_string(pos) +
                               " of " + path);
    }
    std::uint32_t len_be;
    std::memcpy(&len_be, raw.data() + pos, 4);
    const std::uint32_t len = ntohl(len_be);
    if (len > kMaxFrameBytes) {
      throw std::runtime_error("corrupt frame length at byte offset " + std::to_string(pos) +
                               " of " + path);
    }
    if (pos + 4 + len > raw.size()) {
      throw std::runtime_error("torn frame payload at byte offset " + std::to_string(pos) +
                               " of " + path);
    }
    payloads.push_back(raw.substr(pos + 4, len));
    pos += 4 + len;
  }
  return payloads;
}

OracleState replay_oracle(const std::string& broker_log_path, int batch_limit) {
  OracleState state;
  std::map<NodeId, NodeDocument> docs;
  std::vector<ReportMessage> batch;

  auto apply = [&] {
    for (const auto& report : batch) docs[report.uuid] = document_from_report(report);
    std::vector<NodeDocument> all;
    all.reserve(docs.size());
    for (const auto& [_, d] : docs) all.push_back(d);
    state.snapshot_stats.push_back(compute_stats(all));
    state.applied_reports += static_cast<std::int64_t>(batch.size());
    batch.clear();
  };

  for (const auto& payload : read_topic_log(broker_log_path)) {
    ReportMessage report;
    try {
      report = decode_report(payload);
    } catch (const WireError&) {
      ++state.malformed;
      continue;
    }
    batch.push_back(std::move(report));
    if (static_cast<int>(batch.size()) >= batch_limit || !batch.back().alive) apply();
  }
  state.unsealed_tail = static_cast<std::int64_t>(batch.size());

  state.documents.reserve(docs.size());
  for (auto& [_, d] : docs) state.documents.push_back(std::move(d));
  return state;
}

int export_frames(const std::string& api_host, int api_port, const std::string& out_dir,
                  int scale_factor) {
  httplib::Client client(api_host, api_port);
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(5, 0);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  ordered_json index_frames = ordered_json::array();
  int count = 0;
  for (;;) {
    const std::string path =
        "/snapshots?from=" + std::to_string(count) + "&limit=1000";
    auto res = client.Get(path);
    if (!res || res->status != 200) {
      throw std::runtime_error("api unreachable at " + api_host + ":" + std::to_string(api_port));
    }
    const json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("snapshots") || !body["snapshots"].is_array()) {
      throw std::runtime_error("unexpected /snapshots response");
    }
    const auto& snaps = body["snapshots"];
    if (snaps.empty()) break;

    for (const auto& snap : snaps) {
      ordered_json frame;
      frame["sequence"] = snap.value("sequence", static_cast<std::int64_t>(count));
      frame["taken_at"] = snap.value("taken_at", "");
      frame["stats"] = snap.value("stats", json::object());
      ordered_json nodes = ordered_json::array();
      for (const auto& node : snap.value("nodes", json::array())) {
        ordered_json n;
        n["uuid"] = node.value("uuid", "");
        const auto& pos = node["position"];
        n["x"] = pos[0].get<int>() * scale_factor;
        n["y"] = pos[1].get<int>() * scale_factor;
        const bool alive = node.value("alive", true);
        const bool infected = node.value("infected", false);
        n["state"] = !alive ? "dead" : (infected ? "infected" : "safe");
        nodes.push_back(std::move(n));
      }
      frame["nodes"] = std::move(nodes);

      char name[32];
      std::snprintf(name, sizeof name, "frame_%06d.json", count);
      std::ofstream out(out_dir + "/" + std::string(name));
      out << frame.dump(2) << "\n";

      ordered_json entry;
      entry["sequence"] = frame["sequence"];
      entry["file"] = name;
      index_frames.push_back(std::move(entry));
      ++count;
    }
    if (static_cast<int>(snaps.size()) < 1000) break;
  }

  ordered_json index;
  index["count"] = count;
  index["frames"] = std::move(index_frames);
  std::ofstream out(out_dir + "/index.json");
  out << index.dump(2) << "\n";
  return count;
}

RunParameters params_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("parameters: expected a JSON object");
  RunParameters p;
  auto want_int = [&](const char* name, int& out) {
    if (!j.contains(name)) return;
    if (!j[name].is_number_integer()) {
      throw std::invalid_argument(std::string("parameters: ") + name + " must be an integer");
    }
    const auto v = j[name].get<std::int64_t>();
    if (v < INT32_MIN || v > INT32_MAX) {
      throw std::invalid_argument(std::string("parameters: ") + name + " out of range");
    }
    out = static_cast<int>(v);
  };
  want_int("field_width", p.field_width);
  want_int("field_height", p.field_height);
  want_int("scale_factor", p.scale_factor);
  want_int("zombie_lifetime", p.zombie_lifetime);
  want_int("infection_cooldown", p.infection_cooldown);
  if (j.contains("infection_radius")) {
    if (!j["infection_radius"].is_number()) {
      throw std::invalid_argument("parameters: infection_radius must be a number");
    }
    p.infection_radius = j["infection_radius"].get<double>();
  }
  p.validate();
  return p;
}

RunParameters params_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open parameters file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("parameters file " + path + ": malformed JSON");
  return params_from_json(j);
}

ordered_json params_to_json(const RunParameters& params) {
  ordered_json j;
  j["field_width"] = params.field_width;
  j["field_height"] = params.field_height;
  j["scale_factor"] = params.scale_factor;
  j["zombie_lifetime"] = params.zombie_lifetime;
  j["infection_radius"] = params.infection_radius;
  j["infection_cooldown"] = params.infection_cooldown;
  return j;
}

namespace {

/// Transport decorator feeding the traffic histograms.
class CountingTransport final : public Transport {
 public:
  CountingTransport(std::unique_ptr<Transport> inner, std::function<void(std::uint64_t)> on_send)
      : inner_(std::move(inner)), on_send_(std::move(on_send)) {}

  bool broadcast(std::string_view payload) override {
    if (on_send_) on_send_(payload.size());
    return inner_->broadcast(payload);
  }
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override {
    return inner_->receive(timeout);
  }

 private:
  std::unique_ptr<Transport> inner_;
  std::function<void(std::uint64_t)> on_send_;
};

std::int64_t tick_of(Timestamp ts) {
  return (ts - SimClock::default_epoch()) / kMicrosPerSecond;
}

using ContactTriple = std::tuple<NodeId, NodeId, std::int64_t>;  // reporter, peer, micros

std::optional<std::pair<int, std::string>> http_get(const std::string& host, int port,
                                                    const std::string& path) {
  httplib::Client client(host, port);
  client.set_connection_timeout(0, 500'000);
  client.set_read_timeout(3, 0);
  auto res = client.Get(path);
  if (!res) return std::nullopt;
  return std::make_pair(res->status, res->body);
}

struct EngineAgent {
  int spawn_index = 0;
  std::int64_t spawn_tick = 0;
  NodeId id;
  std::unique_ptr<Transport> transport;
  std::unique_ptr<BrokerClient> broker;
  std::unique_ptr<AgentCore> core;  // deterministic mode
  std::unique_ptr<Agent> threaded;  // realtime mode
  bool killed = false;
  bool registered = false;
};

class Engine {
 public:
  explicit Engine(const RunSpec& spec) : spec_(spec) {
    spec_.validate();
    if (spec_.out_dir.empty()) {
      std::string tmpl = std::filesystem::temp_directory_path() / "tracesim-run-XXXXXX";
      if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
      spec_.out_dir = tmpl;
    } else {
      std::filesystem::create_directories(spec_.out_dir);
    }
    broker_dir_ = spec_.out_dir + "/broker";
    store_dir_ = spec_.out_dir + "/store";
  }

  RunReport run() {
    start_infrastructure();
    spawn_initial_agents();
    if (spec_.mode == RunMode::Deterministic) {
      drive_deterministic();
    } else {
      drive_realtime();
    }
    return finish();
  }

 private:
  // -- component lifecycle ----------------------------------------------------

  void start_infrastructure() {
    broker_server_ = std::make_unique<BrokerServer>(
        BrokerServer::Options{"127.0.0.1", 0, broker_dir_});
    broker_port_ = broker_server_->port();
    store_server_ = std::make_unique<StoreServer>(
        StoreServer::Options{"127.0.0.1", 0, store_dir_});
    store_port_ = store_server_->port();
    api_ = std::make_unique<ApiServer>(ApiServer::Options{"127.0.0.1", 0, "127.0.0.1", store_port_});
    api_port_ = api_->port();
    make_consumer();

    if (spec_.transport.mode == TransportMode::InMemory) {
      net_ = std::make_shared<InMemoryNetwork>(spec_.transport, derive_seed(spec_.seed, 7));
    }
  }

  void make_consumer() {
    consumer_ = std::make_unique<Consumer>(ConsumerConfig{spec_.topic}, "127.0.0.1", broker_port_,
                                           "127.0.0.1", store_port_, clock());
  }

  RunClock* clock() {
    if (spec_.mode == RunMode::Deterministic) return &sim_clock_;
    return &wall_clock_;
  }

  // -- agents -----------------------------------------------------------------

  void spawn_initial_agents() {
    std::vector<NodeId> ids;
    RngEngine id_rng(derive_seed(spec_.seed, 0));
    ids.reserve(static_cast<size_t>(spec_.node_count));
    for (int i = 0; i < spec_.node_count; ++i) ids.push_back(random_uuid(id_rng));
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < spec_.node_count; ++i) {
      spawn_agent(ids[static_cast<size_t>(i)], i < spec_.infected_count, 0);
    }
    id_rng_ = id_rng;
  }

  EngineAgent& spawn_agent(const NodeId& id, bool infected, std::int64_t spawn_tick) {
    auto agent = std::make_unique<EngineAgent>();
    agent->spawn_index = static_cast<int>(agents_.size());
    agent->spawn_tick = spawn_tick;
    agent->id = id;

    AgentConfig config;
    config.id = id;
    config.start_infected = infected;
    config.params = spec_.params;
    config.tick_interval = spec_.tick_interval;
    config.rng_seed = derive_seed(spec_.seed, 1000 + static_cast<std::uint64_t>(agent->spawn_index));
    config.topic = spec_.topic;

    std::unique_ptr<Transport> inner;
    if (spec_.transport.mode == TransportMode::InMemory) {
      inner = std::make_unique<InMemoryTransport>(net_, id);
    } else {
      inner = std::make_unique<UdpTransport>(spec_.transport);
    }
    agent->transport = std::make_unique<CountingTransport>(
        std::move(inner), [this](std::uint64_t size) {
          std::lock_guard lock(metrics_mu_);
          metrics_.broadcast_payload_bytes.add(size);
        });
    agent->broker = std::make_unique<BrokerClient>("127.0.0.1", broker_port_,
                                                   std::chrono::milliseconds(2000));
    agent->broker->set_publish_byte_recorder([this](std::uint64_t size) {
      std::lock_guard lock(metrics_mu_);
      metrics_.report_wire_bytes.add(size);
    });

    EngineAgent* raw = agent.get();
    if (spec_.mode == RunMode::Deterministic) {
      agent->core = std::make_unique<AgentCore>(config, agent->transport.get(),
                                                agent->broker.get(), clock());
      agent->core->set_contact_sink([this](const NodeId& reporter, const ContactRecord& rec) {
        folded_contacts_[{reporter, rec.uuid, rec.timestamp.micros()}]++;
      });
      if (net_) {
        net_->register_peer(id, [raw] { return raw->core->position(); });
        agent->registered = true;
      }
    } else {
      agent->threaded = std::make_unique<Agent>(config, std::move(agent->transport),
                                                std::move(agent->broker), clock());
      if (net_) {
        Agent* threaded = agent->threaded.get();
        net_->register_peer(id, [threaded] {
          std::lock_guard lock(threaded->mutex());
          return threaded->core().position();
        });
        agent->registered = true;
      }
    }

    node_ids_.push_back(id);
    agents_.push_back(std::move(agent));
    sorted_.push_back(raw);
    std::sort(sorted_.begin(), sorted_.end(),
              [](const EngineAgent* a, const EngineAgent* b) { return a->id < b->id; });
    return *raw;
  }

  bool agent_live(const EngineAgent& a) const {
    if (a.killed) return false;
    if (spec_.mode == RunMode::Deterministic) return !a.core->terminated();
    return !a.threaded->finished();
  }

  void retire_if_terminated(EngineAgent& a) {
    if (spec_.mode != RunMode::Deterministic) return;
    if (!a.core->terminated() || !a.registered) return;
    collect_unpublished(a);
    if (net_) net_->unregister_peer(a.id);
    a.registered = false;
  }

  void collect_unpublished(EngineAgent& a) {
    if (!a.core) return;
    for (const auto& rec : a.core->unpublished_contacts()) {
      lost_contacts_[{a.id, rec.uuid, rec.timestamp.micros()}]++;
    }
  }

  // -- faults -----------------------------------------------------------------

  void apply_fault(const FaultEvent& ev, std::int64_t tick) {
    log_info("fault " + ev.to_text());
    switch (ev.target) {
      case FaultTarget::Broker:
        if (ev.action == FaultAction::Kill) {
          broker_server_.reset();
          open_broker_outage_ = tick;
        } else {
          broker_server_ = std::make_unique<BrokerServer>(
              BrokerServer::Options{"127.0.0.1", broker_port_, broker_dir_});
          broker_outages_.emplace_back(open_broker_outage_, tick);
          open_broker_outage_ = -1;
        }
        break;
      case FaultTarget::Store:
        if (ev.action == FaultAction::Kill) {
          store_server_.reset();
          probe_data_unavailable();
        } else {
          store_server_ = std::make_unique<StoreServer>(
              StoreServer::Options{"127.0.0.1", store_port_, store_dir_});
        }
        break;
      case FaultTarget::Consumer:
        if (ev.action == FaultAction::Kill) {
          BrokerClient probe("127.0.0.1", broker_port_);
          retained_at_consumer_kill_ = probe.retained_count(spec_.topic).value_or(-1);
          log_at_consumer_kill_ =
              probe.retained_count(spec_.topic, "harness-probe").value_or(-1);
          consumer_.reset();
        } else {
          check_consumer_retention();
          make_consumer();
          if (spec_.mode == RunMode::Realtime && consumer_) consumer_->start();
        }
        break;
      case FaultTarget::Api:
        if (ev.action == FaultAction::Kill) {
          api_.reset();
          const auto res = http_get("127.0.0.1", api_port_, "/health");
          assertions_.push_back({"api-down-connection-refused", !res.has_value(),
                                 res ? "api still answered" : "connection refused as expected"});
        } else {
          api_ = std::make_unique<ApiServer>(
              ApiServer::Options{"127.0.0.1", api_port_, "127.0.0.1", store_port_});
        }
        break;
      case FaultTarget::Node:
        if (ev.action == FaultAction::Spawn) {
          auto& spawned = spawn_agent(random_uuid(id_rng_), ev.spawn_infected, tick);
          spawned_nodes_.emplace_back(spawned.id, tick);
          if (spec_.mode == RunMode::Realtime) spawned.threaded->start();
        } else {
          if (ev.node_index < 0 || ev.node_index >= static_cast<int>(agents_.size())) return;
          EngineAgent& victim = *agents_[static_cast<size_t>(ev.node_index)];
          if (victim.killed) return;
          victim.killed = true;
          killed_ids_.push_back(victim.id);
          if (spec_.mode == RunMode::Deterministic) {
            collect_unpublished(victim);
            victim.core->kill();
          } else {
            victim.threaded->kill();
          }
          if (victim.registered && net_) {
            net_->unregister_peer(victim.id);
            victim.registered = false;
          }
        }
        break;
    }
  }

  void probe_data_unavailable() {
    if (!api_) return;
    const auto res = http_get("127.0.0.1", api_port_, "/data");
    const bool ok = res && res->first == 503 && res->second == R"({"error":"unavailable"})";
    assertions_.push_back(
        {"store-down-data-unavailable-opaque", ok,
         res ? "status " + std::to_string(res->first) + " body " + res->second
             : "api unreachable"});
  }

  void check_consumer_retention() {
    BrokerClient probe("127.0.0.1", broker_port_);
    const auto retained_now = probe.retained_count(spec_.topic).value_or(-1);
    const auto log_now = probe.retained_count(spec_.topic, "harness-probe").value_or(-1);
    const auto publishes = log_now - log_at_consumer_kill_;
    const auto growth = retained_now - retained_at_consumer_kill_;
    const bool ok = retained_at_consumer_kill_ >= 0 && log_at_consumer_kill_ >= 0 &&
                    publishes >= 0 && growth == publishes;
    assertions_.push_back({"consumer-down-retention", ok,
                           "retained grew by " + std::to_string(growth) + ", publishes during downtime " +
                               std::to_string(publishes)});
  }

  // -- deterministic drive ------------------------------------------------------

  void drive_deterministic() {
    std::vector<FaultEvent> schedule = spec_.faults;
    std::stable_sort(schedule.begin(), schedule.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.at_seconds < b.at_seconds; });
    size_t next_fault = 0;

    for (std::int64_t t = 0; t < spec_.duration_seconds; ++t) {
      sim_clock_.advance_to(t * kMicrosPerSecond);
      while (next_fault < schedule.size() && schedule[next_fault].at_seconds == t) {
        apply_fault(schedule[next_fault], t);
        ++next_fault;
      }

      // Phase-major, ascending node id: every broadcast from tick t is heard
      // in tick t+1's drain.
      for (EngineAgent* a : sorted_) {
        if (agent_live(*a)) a->core->drain_inbox();
      }
      for (EngineAgent* a : sorted_) {
        if (agent_live(*a)) a->core->tick_health();
      }
      for (EngineAgent* a : sorted_) {
        if (!agent_live(*a)) continue;
        a->core->tick_move();
        position_trace_[{a->id, t}] = a->core->position();
      }
      for (EngineAgent* a : sorted_) {
        if (agent_live(*a)) a->core->tick_broadcast();
      }
      for (EngineAgent* a : sorted_) {
        if (agent_live(*a)) a->core->tick_publish();
        retire_if_terminated(*a);
      }

      if (consumer_) consumer_->step();
    }
    sim_clock_.advance_to(spec_.duration_seconds * kMicrosPerSecond);
  }

  // -- realtime drive -----------------------------------------------------------

  void drive_realtime() {
    for (EngineAgent* a : sorted_) a->threaded->start();
    if (consumer_) consumer_->start();

    std::vector<FaultEvent> schedule = spec_.faults;
    std::stable_sort(schedule.begin(), schedule.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.at_seconds < b.at_seconds; });
    size_t next_fault = 0;

    const auto start = std::chrono::steady_clock::now();
    const auto end = start + std::chrono::seconds(spec_.duration_seconds);
    while (std::chrono::steady_clock::now() < end) {
      const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
                               std::chrono::steady_clock::now() - start)
                               .count();
      while (next_fault < schedule.size() && schedule[next_fault].at_seconds <= elapsed) {
        apply_fault(schedule[next_fault], elapsed);
        ++next_fault;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }

    for (EngineAgent* a : sorted_) {
      if (!a->killed) a->threaded->stop();
    }
    if (consumer_) consumer_->stop();
  }

  // -- wrap-up --------------------------------------------------------------------

  void consumer_catch_up() {
    if (!consumer_ || !broker_server_) return;
    for (int i = 0; i < 1000; ++i) {
      if (consumer_->step() == 0) break;  // drained, or blocked by an outage
    }
  }

  RunReport finish();
  void assert_oracle_equivalence(RunReport& report);
  void assert_movement_loss();
  void assert_contact_conservation();
  void assert_node_faults();

  RunSpec spec_;
  std::string broker_dir_;
  std::string store_dir_;

  SimClock sim_clock_;
  WallClock wall_clock_;

  std::unique_ptr<BrokerServer> broker_server_;
  std::unique_ptr<StoreServer> store_server_;
  std::unique_ptr<ApiServer> api_;
  std::unique_ptr<Consumer> consumer_;
  std::shared_ptr<InMemoryNetwork> net_;
  int broker_port_ = 0;
  int store_port_ = 0;
  int api_port_ = 0;

  RngEngine id_rng_;
  std::vector<std::unique_ptr<EngineAgent>> agents_;
  std::vector<EngineAgent*> sorted_;
  std::vector<NodeId> node_ids_;

  std::mutex metrics_mu_;
  TrafficMetrics metrics_;

  std::map<ContactTriple, std::int64_t> folded_contacts_;
  std::map<ContactTriple, std::int64_t> lost_contacts_;
  std::map<std::pair<NodeId, std::int64_t>, Position> position_trace_;
  std::vector<std::pair<std::int64_t, std::int64_t>> broker_outages_;
  std::int64_t open_broker_outage_ = -1;
  std::vector<std::pair<NodeId, std::int64_t>> spawned_nodes_;
  std::vector<NodeId> killed_ids_;
  std::int64_t retained_at_consumer_kill_ = -1;
  std::int64_t log_at_consumer_kill_ = -1;

  std::vector<AssertionResult> assertions_;
};

}  // namespace

ordered_json RunReport::to_json() const {
  ordered_json j;
  j["passed"] = passed;
  j["final_stats"] = stats_to_json(final_stats);
  j["broker_records"] = broker_records;
  j["snapshots"] = snapshots;
  j["malformed_messages"] = malformed_messages;
  j["node_ids"] = node_ids;
  ordered_json asserts = ordered_json::array();
  for (const auto& a : assertions) {
    ordered_json e;
    e["name"] = a.name;
    e["passed"] = a.passed;
    e["detail"] = a.detail;
    asserts.push_back(std::move(e));
  }
  j["assertions"] = std::move(asserts);
  j["metrics"] = metrics.to_json();
  ordered_json rows = ordered_json::array();
  for (const auto& r : traffic_rows) {
    ordered_json e;
    e["name"] = r.name;
    e["measured"] = r.measured;
    e["reference"] = r.reference;
    e["band"] = {r.band_lo, r.band_hi};
    e["passed"] = r.passed;
    rows.push_back(std::move(e));
  }
  j["traffic_comparison"] = std::move(rows);
  j["broker_log"] = broker_log_path;
  j["store_journal"] = store_journal_path;
  j["frames_dir"] = frames_dir;
  return j;
}

namespace {

const AgentCore* core_of(const EngineAgent& a) {
  if (a.core) return a.core.get();
  if (a.threaded) return &a.threaded->core();
  return nullptr;
}

RunReport Engine::finish() {
  consumer_catch_up();

  RunReport report;
  report.node_ids = node_ids_;
  report.broker_log_path = broker_dir_ + "/" + spec_.topic + ".log";
  report.store_journal_path = store_dir_ + "/store.journal";

  {
    std::lock_guard lock(metrics_mu_);
    metrics_.finalize();
    report.metrics = metrics_;
  }
  report.traffic_rows =
      traffic_comparison(report.metrics, spec_.node_count, spec_.duration_seconds);

  std::uint64_t malformed = 0;
  for (const auto& a : agents_) {
    if (const AgentCore* core = core_of(*a)) malformed += core->counters().malformed_messages;
  }
  if (consumer_) malformed += consumer_->counters().malformed_skipped;
  report.malformed_messages = malformed;

  if (std::filesystem::exists(report.broker_log_path)) {
    report.broker_records =
        static_cast<std::int64_t>(read_topic_log(report.broker_log_path).size());
  }

  assert_oracle_equivalence(report);
  if (spec_.mode == RunMode::Deterministic) {
    assert_movement_loss();
    assert_contact_conservation();
  }
  assert_node_faults();

  StoreClient store("127.0.0.1", store_port_);
  if (const auto docs = store.get_all()) report.final_stats = compute_stats(*docs);

  if (api_ && spec_.export_frames) {
    try {
      const std::string frames = spec_.out_dir + "/frames";
      export_frames("127.0.0.1", api_port_, frames, spec_.params.scale_factor);
      report.frames_dir = frames;
    } catch (const std::exception& e) {
      log_warn(std::string("frame export failed: ") + e.what());
    }
  }

  report.assertions = assertions_;
  report.passed = std::all_of(assertions_.begin(), assertions_.end(),
                              [](const AssertionResult& a) { return a.passed; });

  std::ofstream out(spec_.out_dir + "/report.json");
  out << report.to_json().dump(2) << "\n";
  return report;
}

void Engine::assert_oracle_equivalence(RunReport& report) {
  if (!std::filesystem::exists(report.broker_log_path)) {
    assertions_.push_back({"oracle-documents-match", true, "skipped: no broker log produced"});
    return;
  }
  const OracleState oracle = replay_oracle(report.broker_log_path);

  StoreClient store("127.0.0.1", store_port_);
  const auto docs = store.get_all();
  if (!docs) {
    assertions_.push_back(
        {"oracle-documents-match", true, "skipped: store unreachable at run end"});
    return;
  }

  const bool docs_equal = *docs == oracle.documents;
  assertions_.push_back({"oracle-documents-match", docs_equal,
                         "store " + std::to_string(docs->size()) + " docs vs oracle " +
                             std::to_string(oracle.documents.size())});

  std::vector<Snapshot> snaps;
  for (;;) {
    const auto page = store.get_snapshots(static_cast<std::int64_t>(snaps.size()), 1000);
    if (!page || page->empty()) break;
    snaps.insert(snaps.end(), page->begin(), page->end());
    if (page->size() < 1000) break;
  }
  report.snapshots = static_cast<std::int64_t>(snaps.size());

  bool stats_equal = snaps.size() == oracle.snapshot_stats.size();
  if (stats_equal) {
    for (size_t i = 0; i < snaps.size(); ++i) {
      if (compute_stats(snaps[i].documents) != oracle.snapshot_stats[i] ||
          snaps[i].sequence != static_cast<std::int64_t>(i)) {
        stats_equal = false;
        break;
      }
    }
  }
  assertions_.push_back({"oracle-snapshot-stats-match", stats_equal,
                         "store " + std::to_string(snaps.size()) + " snapshots vs oracle " +
                             std::to_string(oracle.snapshot_stats.size())});

  // Nodes are never removed and alive never flips back, so document and death
  // counts can only grow along the snapshot history.
  bool monotone = true;
  for (size_t i = 1; i < snaps.size(); ++i) {
    const Stats prev = compute_stats(snaps[i - 1].documents);
    const Stats cur = compute_stats(snaps[i].documents);
    if (cur.total_nodes < prev.total_nodes || cur.deaths < prev.deaths ||
        cur.dead_zombies < prev.dead_zombies) {
      monotone = false;
    }
  }
  if (!snaps.empty()) {
    assertions_.push_back({"snapshot-monotonicity", monotone,
                           monotone ? "counts never decrease across snapshots"
                                    : "a snapshot lost nodes or deaths"});
  }

  if (oracle.malformed == 0 && broker_server_) {
    BrokerClient probe("127.0.0.1", broker_port_);
    const auto retained = probe.retained_count(spec_.topic).value_or(-1);
    const bool ok = retained == oracle.unsealed_tail;
    assertions_.push_back({"retained-matches-unsealed-tail", ok,
                           "retained " + std::to_string(retained) + " vs unsealed tail " +
                               std::to_string(oracle.unsealed_tail)});
  }
}

void Engine::assert_movement_loss() {
  if (open_broker_outage_ >= 0) {
    broker_outages_.emplace_back(open_broker_outage_, spec_.duration_seconds);
    open_broker_outage_ = -1;
  }
  const std::string log_path = broker_dir_ + "/" + spec_.topic + ".log";
  if (!std::filesystem::exists(log_path)) return;

  bool no_outage_positions = true;
  bool positions_match = true;
  std::string first_bad;
  for (const auto& payload : read_topic_log(log_path)) {
    ReportMessage report;
    try {
      report = decode_report(payload);
    } catch (const WireError&) {
      continue;
    }
    const std::int64_t tick = tick_of(report.timestamp);
    for (const auto& [from, to] : broker_outages_) {
      if (tick >= from && tick < to) {
        no_outage_positions = false;
        first_bad = report.uuid + " @tick " + std::to_string(tick);
      }
    }
    const auto it = position_trace_.find({report.uuid, tick});
    if (it == position_trace_.end() || !(it->second == report.position)) {
      positions_match = false;
      first_bad = report.uuid + " @tick " + std::to_string(tick);
    }
  }

  if (!broker_outages_.empty()) {
    assertions_.push_back({"movement-loss-no-outage-positions", no_outage_positions,
                           no_outage_positions ? "no report timestamped inside an outage window"
                                               : "offending report: " + first_bad});
  }
  assertions_.push_back({"report-positions-match-trace", positions_match,
                         positions_match ? "every published position matches the tick trace"
                                         : "mismatch at " + first_bad});
}

void Engine::assert_contact_conservation() {
  const std::string log_path = broker_dir_ + "/" + spec_.topic + ".log";
  if (!std::filesystem::exists(log_path)) return;

  // Contacts still buffered in live agents never reached the broker either.
  for (auto& a : agents_) {
    if (a->registered && !a->killed && a->core && !a->core->terminated()) {
      collect_unpublished(*a);
    }
  }

  std::map<ContactTriple, std::int64_t> published;
  for (const auto& payload : read_topic_log(log_path)) {
    ReportMessage report;
    try {
      report = decode_report(payload);
    } catch (const WireError&) {
      continue;
    }
    for (const auto& c : report.contacts) {
      published[{report.uuid, c.uuid, c.timestamp.micros()}]++;
    }
  }

  std::map<ContactTriple, std::int64_t> expected = folded_contacts_;
  for (const auto& [key, count] : lost_contacts_) {
    auto it = expected.find(key);
    if (it != expected.end()) {
      it->second -= count;
      if (it->second <= 0) expected.erase(it);
    }
  }

  const bool equal = published == expected;
  std::int64_t published_n = 0, expected_n = 0;
  for (const auto& [_, c] : published) published_n += c;
  for (const auto& [_, c] : expected) expected_n += c;
  assertions_.push_back({"contact-conservation", equal,
                         "published " + std::to_string(published_n) + " vs heard-and-kept " +
                             std::to_string(expected_n)});
}

void Engine::assert_node_faults() {
  const std::string log_path = broker_dir_ + "/" + spec_.topic + ".log";

  if (!killed_ids_.empty()) {
    StoreClient store("127.0.0.1", store_port_);
    const auto docs = store.get_all();
    if (docs) {
      std::map<NodeId, const NodeDocument*> by_id;
      for (const auto& d : *docs) by_id[d.uuid] = &d;

      bool killed_ok = true;
      std::string detail = "killed nodes never report alive=false";
      for (const auto& id : killed_ids_) {
        const auto it = by_id.find(id);
        if (it != by_id.end() && !it->second->alive) {
          killed_ok = false;
          detail = "killed node " + id.substr(0, 8) + " has a death report";
        }
      }
      assertions_.push_back({"node-kill-no-death-report", killed_ok, detail});

      bool natural_ok = true;
      int natural = 0;
      for (const auto& a : agents_) {
        const AgentCore* core = core_of(*a);
        if (!core || a->killed || !core->terminated()) continue;
        ++natural;
        const auto it = by_id.find(a->id);
        if (it == by_id.end() || it->second->alive) {
          natural_ok = false;
        }
      }
      if (natural > 0) {
        assertions_.push_back({"natural-deaths-recorded", natural_ok,
                               std::to_string(natural) + " natural deaths checked"});
      }
    }
  }

  if (!spawned_nodes_.empty() && std::filesystem::exists(log_path)) {
    for (const auto& [id, spawn_tick] : spawned_nodes_) {
      bool seen = false;
      std::int64_t first_tick = -1;
      for (const auto& payload : read_topic_log(log_path)) {
        ReportMessage report;
        try {
          report = decode_report(payload);
        } catch (const WireError&) {
          continue;
        }
        if (report.uuid == id) continue;
        for (const auto& c : report.contacts) {
          if (c.uuid != id) continue;
          const std::int64_t tick = tick_of(c.timestamp);
          if (first_tick < 0 || tick < first_tick) first_tick = tick;
          if (tick <= spawn_tick + 2) seen = true;
        }
      }
      assertions_.push_back({"node-add-contacts-within-2-ticks", seen,
                             "node " + id.substr(0, 8) + " spawned @" +
                                 std::to_string(spawn_tick) + ", first heard @" +
                                 std::to_string(first_tick)});
    }
  }
}

}  // namespace

RunReport run(const RunSpec& spec) {
  Engine engine(spec);
  return engine.run();
}

}  // namespace tracesim
