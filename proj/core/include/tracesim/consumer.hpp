#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tracesim/broker.hpp"
#include "tracesim/model.hpp"
#include "tracesim/store.hpp"
#include "tracesim/time.hpp"

namespace tracesim {

struct ConsumerConfig {
  std::string topic = kDefaultTopic;
  std::string group = kDefaultConsumerGroup;
  int batch_limit = 10;  // reports per batch unless a death seals it early
  std::int64_t poll_max = 500;
  std::chrono::milliseconds retry_backoff{500};
};

enum class SealReason { Full, NodeDeath };

struct AggregatedBatch {
  std::vector<ReportMessage> reports;
  SealReason reason = SealReason::Full;
  std::int64_t commit_offset = 0;  // first offset past everything consumed into it
};

struct ConsumerCounters {
  std::uint64_t reports_applied = 0;
  std::uint64_t batches_written = 0;
  std::uint64_t malformed_skipped = 0;
};

/// The pipeline's single consuming activity: polls the topic, seals batches
/// of `batch_limit` reports (or earlier, on a report with alive=false),
/// writes each batch to the store — one upsert per report, in order, then one
/// snapshot — and only then commits the broker offset. Store outages hold the
/// sealed batch for retry; broker outages idle. Uncommitted offsets are
/// redelivered after a crash and absorbed by idempotent upserts.
class Consumer {
 public:
  Consumer(ConsumerConfig config, std::string broker_host, int broker_port,
           std::string store_host, int store_port, RunClock* clock);
  ~Consumer() { stop(); }

  /// Drains whatever is available right now and returns the number of reports
  /// newly applied to the store. Returns early (without error) when either
  /// dependency is down; safe to call again.
  std::size_t step();

  /// Applies one sealed batch to the store; false if the store is
  /// unreachable. Replay-safe.
  bool apply_batch(const AggregatedBatch& batch);

  // Realtime runner: step + backoff on one thread.
  void start();
  void stop();

  const ConsumerCounters& counters() const { return counters_; }
  bool has_sealed_batch() const { return pending_.has_value(); }

 private:
  enum class PendingState { NeedsStore, NeedsCommit };

  bool flush();  // drives the pending sealed batch to completion

  ConsumerConfig config_;
  BrokerClient broker_;
  StoreClient store_;
  RunClock* clock_;

  std::vector<ReportMessage> open_batch_;
  std::int64_t next_offset_ = 0;        // first offset not yet consumed in-memory
  std::int64_t consumed_through_ = -1;  // highest offset folded into open_batch_
  std::optional<AggregatedBatch> pending_;
  PendingState pending_state_ = PendingState::NeedsStore;

  ConsumerCounters counters_;

  std::atomic<bool> stop_{false};
  std::thread runner_;
};

}  // namespace tracesim
