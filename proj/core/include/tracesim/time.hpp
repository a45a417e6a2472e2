#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>

namespace tracesim {

inline constexpr std::int64_t kMicrosPerSecond = 1'000'000;

/// Run-relative simulation time in microseconds since run start.
using SimMicros = std::int64_t;

/// A wall-clock instant at microsecond resolution, rendered as
/// "YYYY-MM-DD HH:MM:SS.ffffff" (UTC). Text and internal form round-trip
/// losslessly.
class Timestamp {
 public:
  Timestamp() = default;
  explicit Timestamp(std::int64_t micros_since_epoch) : micros_(micros_since_epoch) {}

  static Timestamp from_text(const std::string& text);  // throws std::invalid_argument
  static std::optional<Timestamp> try_from_text(const std::string& text);

  std::string to_text() const;
  std::int64_t micros() const { return micros_; }

  Timestamp operator+(SimMicros delta) const { return Timestamp(micros_ + delta); }
  SimMicros operator-(const Timestamp& other) const { return micros_ - other.micros_; }

  auto operator<=>(const Timestamp&) const = default;

 private:
  std::int64_t micros_ = 0;
};

/// Clock a run component reads time from. Realtime components see the wall
/// clock; deterministic runs advance a simulated clock in tick quanta.
class RunClock {
 public:
  virtual ~RunClock() = default;
  virtual Timestamp now() const = 0;
  virtual SimMicros elapsed() const = 0;  // micros since run start
};

class WallClock final : public RunClock {
 public:
  WallClock();
  Timestamp now() const override;
  SimMicros elapsed() const override;

 private:
  Timestamp start_;
};

/// Driver-advanced clock with a fixed epoch so repeated runs emit identical
/// timestamps.
class SimClock final : public RunClock {
 public:
  explicit SimClock(Timestamp epoch = default_epoch()) : epoch_(epoch) {}

  static Timestamp default_epoch();

  Timestamp now() const override { return epoch_ + offset_.load(std::memory_order_relaxed); }
  SimMicros elapsed() const override { return offset_.load(std::memory_order_relaxed); }

  void advance_to(SimMicros offset) { offset_.store(offset, std::memory_order_relaxed); }
  void advance_seconds(std::int64_t s) {
    offset_.fetch_add(s * kMicrosPerSecond, std::memory_order_relaxed);
  }

 private:
  Timestamp epoch_;
  std::atomic<SimMicros> offset_{0};
};

}  // namespace tracesim
