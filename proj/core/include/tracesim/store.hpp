#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tracesim/model.hpp"
#include "tracesim/net.hpp"

namespace tracesim {

inline constexpr int kDefaultStorePort = 27018;

/// Latest known state of one node, keyed by uuid. `last_updated` is the
/// timestamp of the report that produced it, so replaying the same reports
/// rebuilds identical documents.
struct NodeDocument {
  NodeId uuid;
  Position position;
  bool infected = false;
  Timestamp timestamp;
  bool alive = true;
  std::vector<ContactRecord> contacts;
  Timestamp last_updated;

  bool operator==(const NodeDocument&) const = default;
};

NodeDocument document_from_report(const ReportMessage& report);

/// Full copy of all documents at one batch-apply instant.
struct Snapshot {
  std::int64_t sequence = 0;
  Timestamp taken_at;
  std::vector<NodeDocument> documents;  // sorted by uuid

  bool operator==(const Snapshot&) const = default;
};

nlohmann::ordered_json document_to_json(const NodeDocument& doc);
NodeDocument document_from_json(const nlohmann::json& j);  // throws WireError
nlohmann::ordered_json snapshot_to_json(const Snapshot& snap);
Snapshot snapshot_from_json(const nlohmann::json& j);  // throws WireError

enum class StoreOp : std::uint8_t {
  Upsert = 1,
  GetAll = 2,
  AppendSnapshot = 3,
  GetSnapshots = 4,
  Probe = 5,
};

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Embedded document store: an in-memory map plus snapshot list, persisted as
/// a single append-only journal of [u32 big-endian length][JSON entry]
/// records replayed in full at startup. Writes are fsynced before they are
/// acknowledged; a torn tail from a crash is truncated on open.
class StoreState {
 public:
  explicit StoreState(std::string data_dir);  // throws StoreError
  ~StoreState();

  void upsert(const NodeDocument& doc);  // throws StoreError on I/O failure

  std::vector<NodeDocument> get_all() const;  // sorted by uuid

  /// Assigns the next dense sequence number and journals a full copy of the
  /// current documents.
  std::int64_t append_snapshot(Timestamp taken_at);

  std::vector<Snapshot> get_snapshots(std::int64_t from, std::int64_t limit) const;
  std::int64_t snapshot_count() const;

  std::string journal_path() const { return journal_path_; }

 private:
  void journal_append(const std::string& entry);

  std::string journal_path_;
  int journal_fd_ = -1;
  mutable std::shared_mutex mu_;
  std::map<NodeId, NodeDocument> documents_;
  std::vector<Snapshot> snapshots_;
};

class StoreServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string data_dir;
  };

  explicit StoreServer(Options options);
  ~StoreServer();

  int port() const { return server_->port(); }
  StoreState& state() { return state_; }
  void stop();

 private:
  std::string handle(std::uint8_t opcode, const std::string& body);

  StoreState state_;
  std::unique_ptr<FramedServer> server_;
};

class StoreClient {
 public:
  StoreClient(std::string host, int port,
              std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

  bool upsert(const NodeDocument& doc);
  std::optional<std::vector<NodeDocument>> get_all();
  std::optional<std::int64_t> append_snapshot(Timestamp taken_at);
  std::optional<std::vector<Snapshot>> get_snapshots(std::int64_t from, std::int64_t limit);
  bool probe();

 private:
  std::optional<std::string> round_trip(StoreOp op, const std::string& body);

  std::string host_;
  int port_;
  std::chrono::milliseconds timeout_;
};

}  // namespace tracesim
