#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tracesim/net.hpp"
#include "tracesim/time.hpp"

namespace tracesim {

inline constexpr char kDefaultTopic[] = "coronaz";
inline constexpr char kDefaultConsumerGroup[] = "db-consumer";
inline constexpr int kDefaultBrokerPort = 9092;

struct BrokerRecord {
  std::int64_t offset = 0;
  std::string payload;  // byte-exact as published
  Timestamp appended_at;
};

// Broker opcodes on the framed protocol.
enum class BrokerOp : std::uint8_t {
  Publish = 1,
  Poll = 2,
  Commit = 3,
  Count = 4,
  Probe = 5,
};

class BrokerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Durable topic logs: per-topic append-only file of
/// [u32 big-endian payload length][payload bytes] records, offsets implicit
/// by position, plus a per-topic sidecar JSON of committed offsets per
/// consumer group. Every append is flushed before the offset is returned, so
/// an acknowledged publish survives any crash. State is rebuilt from the
/// files alone at startup; a torn trailing record (crash mid-write) is
/// truncated away.
class Broker {
 public:
  explicit Broker(std::string data_dir);  // throws BrokerError on unreadable state
  ~Broker();

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  /// Appends durably; offsets are dense from 0 in append order. The topic is
  /// created on first publish. Throws BrokerError on an invalid topic name or
  /// an I/O failure (the log is left unchanged).
  std::int64_t publish(const std::string& topic, std::string_view payload);

  /// Up to `max_records` records starting at the group's committed offset.
  /// Does not advance the commit. Unknown topics read as empty.
  std::vector<BrokerRecord> poll(const std::string& topic, const std::string& group,
                                 std::int64_t max_records);

  /// committed := max(committed, offset), durably recorded. False if `offset`
  /// exceeds the log length.
  bool commit(const std::string& topic, const std::string& group, std::int64_t offset);

  /// Records not yet committed by `group` (the store-consumer group by
  /// default). Unknown topics count 0.
  std::int64_t retained_count(const std::string& topic,
                              const std::string& group = kDefaultConsumerGroup);

  std::int64_t log_length(const std::string& topic);
  std::string log_path(const std::string& topic) const;

 private:
  struct Topic;

  Topic& open_topic(const std::string& name);  // mu_ held

  std::string data_dir_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Topic>> topics_;
};

/// TCP front: [u32 length][opcode][JSON body] requests against a Broker.
class BrokerServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 = ephemeral
    std::string data_dir;
  };

  explicit BrokerServer(Options options);
  ~BrokerServer();

  int port() const { return server_->port(); }
  Broker& broker() { return broker_; }

  /// Hard stop; in-flight connections are severed.
  void stop();

 private:
  std::string handle(std::uint8_t opcode, const std::string& body);

  Broker broker_;
  std::unique_ptr<FramedServer> server_;
};

/// Connect-per-request client. All calls report broker unavailability as
/// std::nullopt / false rather than throwing; an agent treats that as an
/// outage and buffers.
class BrokerClient {
 public:
  BrokerClient(std::string host, int port,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

  std::optional<std::int64_t> publish(const std::string& topic, std::string_view payload);
  std::optional<std::vector<BrokerRecord>> poll(const std::string& topic,
                                                const std::string& group,
                                                std::int64_t max_records);
  bool commit(const std::string& topic, const std::string& group, std::int64_t offset);
  std::optional<std::int64_t> retained_count(const std::string& topic,
                                             const std::string& group = kDefaultConsumerGroup);
  bool probe();

  /// Observes the wire size of every publish request frame (for traffic
  /// accounting). Must be thread-safe if clients share it.
  void set_publish_byte_recorder(std::function<void(std::uint64_t)> recorder) {
    publish_bytes_ = std::move(recorder);
  }

 private:
  std::optional<std::string> round_trip(BrokerOp op, const std::string& body);

  std::string host_;
  int port_;
  std::chrono::milliseconds timeout_;
  std::function<void(std::uint64_t)> publish_bytes_;
};

}  // namespace tracesim
