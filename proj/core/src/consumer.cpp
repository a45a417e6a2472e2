#include "tracesim/consumer.hpp"

#include "tracesim/log.hpp"
#include "tracesim/wire.hpp"

namespace tracesim {

Consumer::Consumer(ConsumerConfig config, std::string broker_host, int broker_port,
                   std::string store_host, int store_port, RunClock* clock)
    : config_(std::move(config)),
      broker_(std::move(broker_host), broker_port),
      store_(std::move(store_host), store_port),
      clock_(clock) {}

bool Consumer::apply_batch(const AggregatedBatch& batch) {
  // One upsert per report, in order: a later report for the same uuid within
  // the batch overwrites the earlier one. A full replay of the same batch
  // lands on identical documents.
  for (const auto& report : batch.reports) {
    if (!store_.upsert(document_from_report(report))) return false;
  }
  if (!store_.append_snapshot(clock_->now())) return false;
  return true;
}

bool Consumer::flush() {
  if (!pending_) return true;
  if (pending_state_ == PendingState::NeedsStore) {
    if (!apply_batch(*pending_)) return false;  // store down: hold and retry
    counters_.reports_applied += pending_->reports.size();
    ++counters_.batches_written;
    pending_state_ = PendingState::NeedsCommit;
  }
  // Store writes are durable; only now may the offset move.
  if (!broker_.commit(config_.topic, config_.group, pending_->commit_offset)) return false;
  pending_.reset();
  pending_state_ = PendingState::NeedsStore;
  return true;
}

std::size_t Consumer::step() {
  std::size_t applied_before = counters_.reports_applied;

  if (!flush()) return counters_.reports_applied - applied_before;

  for (;;) {
    const auto records = broker_.poll(config_.topic, config_.group, config_.poll_max);
    if (!records) break;  // broker down: idle until the next step

    bool progressed = false;
    for (const auto& record : *records) {
      if (record.offset < next_offset_) continue;  // already consumed, awaiting commit
      next_offset_ = record.offset + 1;
      progressed = true;

      ReportMessage report;
      try {
        report = decode_report(record.payload);
      } catch (const WireError& e) {
        ++counters_.malformed_skipped;
        log_warn("consumer skipped malformed record @" + std::to_string(record.offset) + ": " +
                 e.what());
        if (open_batch_.empty() && !pending_) {
          // Nothing at risk; advance the commit past the junk immediately.
          broker_.commit(config_.topic, config_.group, record.offset + 1);
        } else {
          consumed_through_ = record.offset;
        }
        continue;
      }

      open_batch_.push_back(std::move(report));
      consumed_through_ = record.offset;

      const bool death = !open_batch_.back().alive;
      if (static_cast<int>(open_batch_.size()) >= config_.batch_limit || death) {
        AggregatedBatch batch;
        batch.reports = std::move(open_batch_);
        batch.reason = death ? SealReason::NodeDeath : SealReason::Full;
        batch.commit_offset = consumed_through_ + 1;
        open_batch_.clear();
        pending_ = std::move(batch);
        pending_state_ = PendingState::NeedsStore;
        if (!flush()) return counters_.reports_applied - applied_before;
      }
    }

    if (!progressed || static_cast<std::int64_t>(records->size()) < config_.poll_max) break;
  }

  return counters_.reports_applied - applied_before;
}

void Consumer::start() {
  stop_.store(false);
  runner_ = std::thread([this] {
    while (!stop_.load()) {
      step();
      const auto deadline = std::chrono::steady_clock::now() + config_.retry_backoff;
      while (!stop_.load() && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
  });
}

void Consumer::stop() {
  stop_.store(true);
  if (runner_.joinable()) runner_.join();
}

}  // namespace tracesim
