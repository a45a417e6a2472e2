#include "tracesim/store.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "tracesim/wire.hpp"

namespace tracesim {

using nlohmann::json;
using nlohmann::ordered_json;

NodeDocument document_from_report(const ReportMessage& report) {
  NodeDocument doc;
  doc.uuid = report.uuid;
  doc.position = report.position;
  doc.infected = report.infected;
  doc.timestamp = report.timestamp;
  doc.alive = report.alive;
  doc.contacts = report.contacts;
  doc.last_updated = report.timestamp;
  return doc;
}

ordered_json document_to_json(const NodeDocument& doc) {
  BroadcastMessage base;
  base.uuid = doc.uuid;
  base.position = doc.position;
  base.infected = doc.infected;
  base.timestamp = doc.timestamp;
  base.alive = doc.alive;
  ordered_json j = broadcast_fields_to_json(base);
  j["contacts"] = contacts_to_json(doc.contacts);
  j["last_updated"] = doc.last_updated.to_text();
  return j;
}

NodeDocument document_from_json(const json& j) {
  const BroadcastMessage base = broadcast_fields_from_json(j);
  NodeDocument doc;
  doc.uuid = base.uuid;
  doc.position = base.position;
  doc.infected = base.infected;
  doc.timestamp = base.timestamp;
  doc.alive = base.alive;
  doc.contacts = contacts_from_json(j, "contacts");
  if (!j.contains("last_updated") || !j["last_updated"].is_string()) {
    throw WireError("last_updated", "missing");
  }
  const auto ts = Timestamp::try_from_text(j["last_updated"].get<std::string>());
  if (!ts) throw WireError("last_updated", "expected 'YYYY-MM-DD HH:MM:SS.ffffff'");
  doc.last_updated = *ts;
  return doc;
}

ordered_json snapshot_to_json(const Snapshot& snap) {
  ordered_json j;
  j["sequence"] = snap.sequence;
  j["taken_at"] = snap.taken_at.to_text();
  ordered_json docs = ordered_json::array();
  for (const auto& d : snap.documents) docs.push_back(document_to_json(d));
  j["documents"] = std::move(docs);
  return j;
}

Snapshot snapshot_from_json(const json& j) {
  Snapshot snap;
  if (!j.is_object() || !j.contains("sequence") || !j["sequence"].is_number_integer()) {
    throw WireError("sequence", "missing or not an integer");
  }
  snap.sequence = j["sequence"].get<std::int64_t>();
  if (!j.contains("taken_at") || !j["taken_at"].is_string()) {
    throw WireError("taken_at", "missing");
  }
  const auto ts = Timestamp::try_from_text(j["taken_at"].get<std::string>());
  if (!ts) throw WireError("taken_at", "expected 'YYYY-MM-DD HH:MM:SS.ffffff'");
  snap.taken_at = *ts;
  if (!j.contains("documents") || !j["documents"].is_array()) {
    throw WireError("documents", "missing or not an array");
  }
  for (const auto& d : j["documents"]) snap.documents.push_back(document_from_json(d));
  return snap;
}

StoreState::StoreState(std::string data_dir) {
  std::error_code ec;
  std::filesystem::create_directories(data_dir, ec);
  if (ec) throw StoreError("create " + data_dir + ": " + ec.message());
  journal_path_ = data_dir + "/store.journal";

  journal_fd_ = ::open(journal_path_.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
  if (journal_fd_ < 0) throw StoreError("open " + journal_path_ + ": " + strerror(errno));

  std::string raw;
  const off_t size = ::lseek(journal_fd_, 0, SEEK_END);
  raw.resize(static_cast<size_t>(size));
  if (size > 0 && ::pread(journal_fd_, raw.data(), raw.size(), 0) != size) {
    throw StoreError("read " + journal_path_ + ": " + strerror(errno));
  }

  size_t pos = 0;
  size_t valid_end = 0;
  while (pos + 4 <= raw.size()) {
    std::uint32_t len_be;
    std::memcpy(&len_be, raw.data() + pos, 4);
    const std::uint32_t len = ntohl(len_be);
    if (len > kMaxFrameBytes || pos + 4 + len > raw.size()) break;
    const json entry = json::parse(raw.substr(pos + 4, len), nullptr, false);
    if (entry.is_discarded() || !entry.is_object()) break;
    const std::string op = entry.value("op", "");
    try {
      if (op == "upsert") {
        NodeDocument doc = document_from_json(entry.at("document"));
        documents_[doc.uuid] = std::move(doc);
      } else if (op == "snapshot") {
        snapshots_.push_back(snapshot_from_json(entry.at("snapshot")));
      } else {
        break;
      }
    } catch (const std::exception&) {
      break;
    }
    pos += 4 + len;
    valid_end = pos;
  }
  if (valid_end < raw.size()) {
    if (::ftruncate(journal_fd_, static_cast<off_t>(valid_end)) != 0) {
      throw StoreError("truncate torn tail of " + journal_path_ + ": " + strerror(errno));
    }
  }
}

StoreState::~StoreState() {
  if (journal_fd_ >= 0) ::close(journal_fd_);
}

void StoreState::journal_append(const std::string& entry) {
  std::string frame;
  frame.reserve(4 + entry.size());
  const std::uint32_t len_be = htonl(static_cast<std::uint32_t>(entry.size()));
  frame.append(reinterpret_cast<const char*>(&len_be), 4);
  frame.append(entry);

  size_t off = 0;
  while (off < frame.size()) {
    const ssize_t n = ::write(journal_fd_, frame.data() + off, frame.size() - off);
    if (n <= 0) throw StoreError("append to " + journal_path_ + ": " + strerror(errno));
    off += static_cast<size_t>(n);
  }
  if (::fsync(journal_fd_) != 0) {
    throw StoreError("fsync " + journal_path_ + ": " + strerror(errno));
  }
}

void StoreState::upsert(const NodeDocument& doc) {
  std::unique_lock lock(mu_);
  ordered_json entry;
  entry["op"] = "upsert";
  entry["document"] = document_to_json(doc);
  journal_append(entry.dump());
  documents_[doc.uuid] = doc;
}

std::vector<NodeDocument> StoreState::get_all() const {
  std::shared_lock lock(mu_);
  std::vector<NodeDocument> out;
  out.reserve(documents_.size());
  for (const auto& [_, doc] : documents_) out.push_back(doc);
  return out;
}

std::int64_t StoreState::append_snapshot(Timestamp taken_at) {
  std::unique_lock lock(mu_);
  Snapshot snap;
  snap.sequence = static_cast<std::int64_t>(snapshots_.size());
  snap.taken_at = taken_at;
  snap.documents.reserve(documents_.size());
  for (const auto& [_, doc] : documents_) snap.documents.push_back(doc);

  ordered_json entry;
  entry["op"] = "snapshot";
  entry["snapshot"] = snapshot_to_json(snap);
  journal_append(entry.dump());
  snapshots_.push_back(std::move(snap));
  return snapshots_.back().sequence;
}

std::vector<Snapshot> StoreState::get_snapshots(std::int64_t from, std::int64_t limit) const {
  std::shared_lock lock(mu_);
  std::vector<Snapshot> out;
  if (from < 0 || limit <= 0) return out;
  for (std::int64_t i = from;
       i < static_cast<std::int64_t>(snapshots_.size()) &&
       static_cast<std::int64_t>(out.size()) < limit;
       ++i) {
    out.push_back(snapshots_[static_cast<size_t>(i)]);
  }
  return out;
}

std::int64_t StoreState::snapshot_count() const {
  std::shared_lock lock(mu_);
  return static_cast<std::int64_t>(snapshots_.size());
}

StoreServer::StoreServer(Options options) : state_(options.data_dir) {
  server_ = std::make_unique<FramedServer>(
      options.host, options.port,
      [this](std::uint8_t op, const std::string& body) { return handle(op, body); });
}

StoreServer::~StoreServer() { stop(); }

void StoreServer::stop() {
  if (server_) server_->stop();
}

namespace {

std::string error_body(const std::string& message) {
  ordered_json j;
  j["ok"] = false;
  j["error"] = message;
  return j.dump();
}

}  // namespace

std::string StoreServer::handle(std::uint8_t opcode, const std::string& body) {
  json req = json::parse(body, nullptr, false);
  if (req.is_discarded()) return error_body("malformed request body");

  try {
    switch (static_cast<StoreOp>(opcode)) {
      case StoreOp::Upsert: {
        if (!req.is_object() || !req.contains("document")) {
          return error_body("upsert requires document");
        }
        state_.upsert(document_from_json(req["document"]));
        return R"({"ok":true})";
      }
      case StoreOp::GetAll: {
        ordered_json docs = ordered_json::array();
        for (const auto& d : state_.get_all()) docs.push_back(document_to_json(d));
        ordered_json resp;
        resp["ok"] = true;
        resp["documents"] = std::move(docs);
        return resp.dump();
      }
      case StoreOp::AppendSnapshot: {
        Timestamp taken_at = WallClock().now();
        if (req.is_object() && req.contains("taken_at") && req["taken_at"].is_string()) {
          if (auto ts = Timestamp::try_from_text(req["taken_at"].get<std::string>())) {
            taken_at = *ts;
          } else {
            return error_body("taken_at: expected 'YYYY-MM-DD HH:MM:SS.ffffff'");
          }
        }
        ordered_json resp;
        resp["ok"] = true;
        resp["sequence"] = state_.append_snapshot(taken_at);
        return resp.dump();
      }
      case StoreOp::GetSnapshots: {
        if (!req.is_object() || !req.contains("from") || !req["from"].is_number_integer() ||
            !req.contains("limit") || !req["limit"].is_number_integer()) {
          return error_body("get_snapshots requires from and limit");
        }
        ordered_json snaps = ordered_json::array();
        for (const auto& s :
             state_.get_snapshots(req["from"].get<std::int64_t>(), req["limit"].get<std::int64_t>())) {
          snaps.push_back(snapshot_to_json(s));
        }
        ordered_json resp;
        resp["ok"] = true;
        resp["snapshots"] = std::move(snaps);
        return resp.dump();
      }
      case StoreOp::Probe:
        return R"({"ok":true})";
    }
  } catch (const WireError& e) {
    return error_body(e.what());
  } catch (const StoreError& e) {
    return error_body(e.what());
  }
  return error_body("unknown opcode " + std::to_string(opcode));
}

StoreClient::StoreClient(std::string host, int port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

std::optional<std::string> StoreClient::round_trip(StoreOp op, const std::string& body) {
  auto sock = Socket::connect(host_, port_, timeout_);
  if (!sock) return std::nullopt;
  sock->set_recv_timeout(timeout_);
  if (!write_request_frame(*sock, static_cast<std::uint8_t>(op), body)) return std::nullopt;
  return read_response_frame(*sock);
}

bool StoreClient::upsert(const NodeDocument& doc) {
  ordered_json req;
  req["document"] = document_to_json(doc);
  const auto resp = round_trip(StoreOp::Upsert, req.dump());
  if (!resp) return false;
  const json j = json::parse(*resp, nullptr, false);
  return j.is_object() && j.value("ok", false);
}

std::optional<std::vector<NodeDocument>> StoreClient::get_all() {
  const auto resp = round_trip(StoreOp::GetAll, "{}");
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("documents") ||
      !j["documents"].is_array()) {
    return std::nullopt;
  }
  std::vector<NodeDocument> out;
  try {
    for (const auto& d : j["documents"]) out.push_back(document_from_json(d));
  } catch (const WireError&) {
    return std::nullopt;
  }
  return out;
}

std::optional<std::int64_t> StoreClient::append_snapshot(Timestamp taken_at) {
  ordered_json req;
  req["taken_at"] = taken_at.to_text();
  const auto resp = round_trip(StoreOp::AppendSnapshot, req.dump());
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("sequence")) {
    return std::nullopt;
  }
  return j["sequence"].get<std::int64_t>();
}

std::optional<std::vector<Snapshot>> StoreClient::get_snapshots(std::int64_t from,
                                                                std::int64_t limit) {
  ordered_json req;
  req["from"] = from;
  req["limit"] = limit;
  const auto resp = round_trip(StoreOp::GetSnapshots, req.dump());
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("snapshots") ||
      !j["snapshots"].is_array()) {
    return std::nullopt;
  }
  std::vector<Snapshot> out;
  try {
    for (const auto& s : j["snapshots"]) out.push_back(snapshot_from_json(s));
  } catch (const WireError&) {
    return std::nullopt;
  }
  return out;
}

bool StoreClient::probe() {
  const auto resp = round_trip(StoreOp::Probe, "{}");
  if (!resp) return false;
  const json j = json::parse(*resp, nullptr, false);
  return j.is_object() && j.value("ok", false);
}

}  // namespace tracesim
