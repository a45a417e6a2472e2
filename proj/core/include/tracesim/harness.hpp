#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tracesim/broker.hpp"
#include "tracesim/model.hpp"
#include "tracesim/store.hpp"
#include "tracesim/transport.hpp"

namespace tracesim {

enum class FaultTarget { Broker, Consumer, Store, Api, Node };
enum class FaultAction { Kill, Restore, Spawn };

/// One scheduled event. Kill is immediate termination without flush; Restore
/// brings the component back over the same on-disk state (and may only
/// follow a Kill of the same target). Spawn (Node only) adds a fresh agent
/// mid-run.
struct FaultEvent {
  std::int64_t at_seconds = 0;
  FaultTarget target = FaultTarget::Broker;
  FaultAction action = FaultAction::Kill;
  int node_index = -1;        // Node/Kill: index into the spawn-ordered id list
  bool spawn_infected = false;

  std::string to_text() const;
};

/// "kill:broker@10", "restore:store@20", "kill:node:2@5", "spawn:node@30",
/// "spawn:node:infected@30".
FaultEvent parse_fault(const std::string& text);  // throws std::invalid_argument

enum class RunMode { Realtime, Deterministic };

struct RunSpec {
  RunParameters params;
  int node_count = 20;
  int infected_count = 1;
  std::int64_t duration_seconds = 120;
  std::uint64_t seed = 1;
  TransportConfig transport;
  std::vector<FaultEvent> faults;
  RunMode mode = RunMode::Deterministic;
  std::string topic = kDefaultTopic;
  std::string out_dir;          // artifact root; a temp dir when empty
  bool export_frames = true;
  double tick_interval = 1.0;   // realtime mode only

  void validate() const;  // throws std::invalid_argument
};

struct SizeHistogram {
  std::map<std::uint64_t, std::uint64_t> counts;

  void add(std::uint64_t size) { ++counts[size]; }
  std::uint64_t samples() const;
  std::uint64_t min() const;
  std::uint64_t max() const;
  std::uint64_t total() const;
  double mean() const;
};

/// Per-datagram framing overhead used for traffic accounting, matching the
/// reference capture's payload-to-frame delta (189 B - 148 B).
inline constexpr std::uint64_t kDatagramHeaderOverheadBytes = 41;

struct TrafficMetrics {
  SizeHistogram broadcast_payload_bytes;
  /// Wire size of each publish request frame sent to the broker — what a
  /// capture of the node-to-server connection would show per report.
  SizeHistogram report_wire_bytes;
  std::uint64_t total_bytes_sent = 0;
  /// Framed broadcast plus worst-case report wire bytes, per node per second.
  double per_node_per_second_bytes = 0;

  void finalize();
  nlohmann::ordered_json to_json() const;
};

// Reference measurements from the original system's packet capture, used as
// comparison baselines by `traffic_comparison`.
inline constexpr double kReferenceBroadcastPayloadBytes = 148;
inline constexpr double kReferenceBroadcastFramedBytes = 189;
inline constexpr double kReferenceWorstReportBytes = 2490;
inline constexpr double kReferenceTotalBytes20Nodes120s = 6'430'000;

struct TrafficComparisonRow {
  std::string name;
  double measured = 0;
  double reference = 0;
  double band_lo = 0;
  double band_hi = 0;
  bool passed = false;
};

/// The four comparison rows: broadcast payload (reference ± 20 B), framed
/// broadcast (± 20 B), worst-case report wire bytes (± 20 %), and the
/// node_count x duration extrapolated total (± 20 %).
std::vector<TrafficComparisonRow> traffic_comparison(const TrafficMetrics& metrics,
                                                     int node_count,
                                                     std::int64_t duration_seconds);

struct AssertionResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunReport {
  Stats final_stats;
  TrafficMetrics metrics;
  std::vector<TrafficComparisonRow> traffic_rows;
  std::vector<AssertionResult> assertions;
  std::vector<NodeId> node_ids;  // spawn order
  std::string broker_log_path;
  std::string store_journal_path;
  std::string frames_dir;
  std::int64_t broker_records = 0;
  std::int64_t snapshots = 0;
  std::uint64_t malformed_messages = 0;
  bool passed = false;

  nlohmann::ordered_json to_json() const;
};

/// Runs the full pipeline per `spec`: broker, store, consumer and API come
/// up, agents are spawned, scheduled faults fire, and the post-run assertions
/// (oracle equivalence, movement-loss, contact conservation, per-fault
/// contracts) are evaluated into the report.
RunReport run(const RunSpec& spec);

/// Payloads of a topic log, in offset order. Throws std::runtime_error naming
/// the byte offset of a torn or oversized frame.
std::vector<std::string> read_topic_log(const std::string& path);

struct OracleState {
  std::vector<NodeDocument> documents;  // sorted by uuid
  std::vector<Stats> snapshot_stats;    // one per applied batch, in order
  std::int64_t applied_reports = 0;
  std::int64_t unsealed_tail = 0;  // trailing reports short of a batch
  std::int64_t malformed = 0;
};

/// Single-pass, single-process replay of a broker log through the consumer's
/// batching and upsert semantics. A trailing unsealed batch is not applied,
/// mirroring a consumer that is still waiting for its tenth report.
OracleState replay_oracle(const std::string& broker_log_path, int batch_limit = 10);

/// Pulls every snapshot from a running API and writes one frame file per
/// snapshot plus an index — positions multiplied by `scale_factor`, node
/// states labeled safe/infected/dead. Returns the frame count; throws
/// std::runtime_error when the API is unreachable.
int export_frames(const std::string& api_host, int api_port, const std::string& out_dir,
                  int scale_factor);

// Parameters file in the init-script layout: a JSON object with exactly the
// six knobs, e.g. {"field_width":100,...,"infection_cooldown":15}.
RunParameters params_from_json(const nlohmann::json& j);  // throws std::invalid_argument
RunParameters params_from_file(const std::string& path);
nlohmann::ordered_json params_to_json(const RunParameters& params);

}  // namespace tracesim
