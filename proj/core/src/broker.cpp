#include "tracesim/broker.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "tracesim/wire.hpp"

namespace tracesim {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool valid_topic_name(const std::string& name) {
  if (name.empty() || name.size() > 128) return false;
  for (const char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    if (!ok) return false;
  }
  return name != "." && name != "..";
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw BrokerError("open " + tmp + ": " + strerror(errno));
  bool ok = true;
  size_t off = 0;
  while (off < contents.size()) {
    const ssize_t n = ::write(fd, contents.data() + off, contents.size() - off);
    if (n <= 0) {
      ok = false;
      break;
    }
    off += static_cast<size_t>(n);
  }
  if (ok) ok = ::fsync(fd) == 0;
  ::close(fd);
  if (!ok || ::rename(tmp.c_str(), path.c_str()) != 0) {
    throw BrokerError("persist " + path + ": " + strerror(errno));
  }
}

}  // namespace

struct Broker::Topic {
  std::string name;
  int log_fd = -1;
  std::vector<std::string> payloads;
  std::vector<Timestamp> appended_at;
  std::map<std::string, std::int64_t> committed;  // group -> offset
  std::string log_path;
  std::string commits_path;

  ~Topic() {
    if (log_fd >= 0) ::close(log_fd);
  }
};

Broker::Broker(std::string data_dir) : data_dir_(std::move(data_dir)) {
  std::error_code ec;
  std::filesystem::create_directories(data_dir_, ec);
  if (ec) throw BrokerError("create " + data_dir_ + ": " + ec.message());

  // Eagerly recover every topic present on disk.
  for (const auto& entry : std::filesystem::directory_iterator(data_dir_)) {
    const auto path = entry.path();
    if (path.extension() == ".log") {
      std::lock_guard lock(mu_);
      open_topic(path.stem().string());
    }
  }
}

Broker::~Broker() = default;

std::string Broker::log_path(const std::string& topic) const {
  return data_dir_ + "/" + topic + ".log";
}

Broker::Topic& Broker::open_topic(const std::string& name) {
  auto it = topics_.find(name);
  if (it != topics_.end()) return *it->second;
  if (!valid_topic_name(name)) throw BrokerError("invalid topic name: '" + name + "'");

  auto topic = std::make_unique<Topic>();
  topic->name = name;
  topic->log_path = log_path(name);
  topic->commits_path = data_dir_ + "/" + name + ".commits.json";

  // Replay the log in full; desk-scale logs make an index unnecessary.
  topic->log_fd = ::open(topic->log_path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
  if (topic->log_fd < 0) throw BrokerError("open " + topic->log_path + ": " + strerror(errno));

  std::string raw;
  {
    const off_t size = ::lseek(topic->log_fd, 0, SEEK_END);
    raw.resize(static_cast<size_t>(size));
    if (size > 0 && ::pread(topic->log_fd, raw.data(), raw.size(), 0) != size) {
      throw BrokerError("read " + topic->log_path + ": " + strerror(errno));
    }
  }
  const Timestamp recovered_at = WallClock().now();
  size_t pos = 0;
  size_t valid_end = 0;
  while (pos + 4 <= raw.size()) {
    std::uint32_t len_be;
    std::memcpy(&len_be, raw.data() + pos, 4);
    const std::uint32_t len = ntohl(len_be);
    if (len > kMaxFrameBytes || pos + 4 + len > raw.size()) break;  // torn tail
    topic->payloads.emplace_back(raw.substr(pos + 4, len));
    topic->appended_at.push_back(recovered_at);
    pos += 4 + len;
    valid_end = pos;
  }
  if (valid_end < raw.size()) {
    if (::ftruncate(topic->log_fd, static_cast<off_t>(valid_end)) != 0) {
      throw BrokerError("truncate torn tail of " + topic->log_path + ": " + strerror(errno));
    }
  }

  if (std::filesystem::exists(topic->commits_path)) {
    std::string text;
    {
      const int fd = ::open(topic->commits_path.c_str(), O_RDONLY);
      if (fd >= 0) {
        const off_t size = ::lseek(fd, 0, SEEK_END);
        text.resize(static_cast<size_t>(size));
        if (size > 0 && ::pread(fd, text.data(), text.size(), 0) != size) text.clear();
        ::close(fd);
      }
    }
    const json j = json::parse(text, nullptr, false);
    if (j.is_object()) {
      for (const auto& [group, offset] : j.items()) {
        if (offset.is_number_integer()) {
          auto v = offset.get<std::int64_t>();
          // A commit can never exceed what survived recovery.
          topic->committed[group] =
              std::min<std::int64_t>(v, static_cast<std::int64_t>(topic->payloads.size()));
        }
      }
    }
  }

  return *topics_.emplace(name, std::move(topic)).first->second;
}

std::int64_t Broker::publish(const std::string& topic_name, std::string_view payload) {
  std::lock_guard lock(mu_);
  Topic& topic = open_topic(topic_name);

  std::string frame;
  frame.reserve(4 + payload.size());
  const std::uint32_t len_be = htonl(static_cast<std::uint32_t>(payload.size()));
  frame.append(reinterpret_cast<const char*>(&len_be), 4);
  frame.append(payload);

  size_t off = 0;
  while (off < frame.size()) {
    const ssize_t n = ::write(topic.log_fd, frame.data() + off, frame.size() - off);
    if (n <= 0) {
      // Partial append: roll the file back so the log stays record-aligned.
      const off_t good = static_cast<off_t>(
          std::filesystem::file_size(topic.log_path) - off);
      if (::ftruncate(topic.log_fd, good) != 0) {
        throw BrokerError("append+rollback failed on " + topic.log_path);
      }
      throw BrokerError("append to " + topic.log_path + ": " + strerror(errno));
    }
    off += static_cast<size_t>(n);
  }
  if (::fsync(topic.log_fd) != 0) {
    throw BrokerError("fsync " + topic.log_path + ": " + strerror(errno));
  }

  topic.payloads.emplace_back(payload);
  topic.appended_at.push_back(WallClock().now());
  return static_cast<std::int64_t>(topic.payloads.size()) - 1;
}

std::vector<BrokerRecord> Broker::poll(const std::string& topic_name, const std::string& group,
                                       std::int64_t max_records) {
  std::lock_guard lock(mu_);
  auto it = topics_.find(topic_name);
  if (it == topics_.end()) return {};
  Topic& topic = *it->second;

  std::int64_t from = 0;
  if (auto c = topic.committed.find(group); c != topic.committed.end()) from = c->second;

  std::vector<BrokerRecord> out;
  const auto end = static_cast<std::int64_t>(topic.payloads.size());
  for (std::int64_t i = from; i < end && static_cast<std::int64_t>(out.size()) < max_records;
       ++i) {
    out.push_back(BrokerRecord{i, topic.payloads[static_cast<size_t>(i)],
                               topic.appended_at[static_cast<size_t>(i)]});
  }
  return out;
}

bool Broker::commit(const std::string& topic_name, const std::string& group,
                    std::int64_t offset) {
  std::lock_guard lock(mu_);
  Topic& topic = open_topic(topic_name);
  if (offset < 0 || offset > static_cast<std::int64_t>(topic.payloads.size())) return false;

  auto& committed = topic.committed[group];
  committed = std::max(committed, offset);

  json j = json::object();
  for (const auto& [g, o] : topic.committed) j[g] = o;
  write_file_atomic(topic.commits_path, j.dump());
  return true;
}

std::int64_t Broker::retained_count(const std::string& topic_name, const std::string& group) {
  std::lock_guard lock(mu_);
  auto it = topics_.find(topic_name);
  if (it == topics_.end()) return 0;
  Topic& topic = *it->second;
  std::int64_t committed = 0;
  if (auto c = topic.committed.find(group); c != topic.committed.end()) committed = c->second;
  return static_cast<std::int64_t>(topic.payloads.size()) - committed;
}

std::int64_t Broker::log_length(const std::string& topic_name) {
  std::lock_guard lock(mu_);
  auto it = topics_.find(topic_name);
  return it == topics_.end() ? 0 : static_cast<std::int64_t>(it->second->payloads.size());
}

BrokerServer::BrokerServer(Options options) : broker_(options.data_dir) {
  server_ = std::make_unique<FramedServer>(
      options.host, options.port,
      [this](std::uint8_t op, const std::string& body) { return handle(op, body); });
}

BrokerServer::~BrokerServer() { stop(); }

void BrokerServer::stop() {
  if (server_) server_->stop();
}

namespace {

std::string error_body(const std::string& message) {
  ordered_json j;
  j["ok"] = false;
  j["error"] = message;
  return j.dump();
}

std::optional<std::string> get_string(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string()) return std::nullopt;
  return j[key].get<std::string>();
}

std::optional<std::int64_t> get_int(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer()) return std::nullopt;
  return j[key].get<std::int64_t>();
}

}  // namespace

std::string BrokerServer::handle(std::uint8_t opcode, const std::string& body) {
  json req = json::parse(body, nullptr, false);
  if (req.is_discarded()) return error_body("malformed request body");

  try {
    switch (static_cast<BrokerOp>(opcode)) {
      case BrokerOp::Publish: {
        const auto topic = get_string(req, "topic");
        const auto payload_b64 = get_string(req, "payload");
        if (!topic || !payload_b64) return error_body("publish requires topic and payload");
        std::string payload;
        try {
          payload = base64_decode(*payload_b64);
        } catch (const std::invalid_argument& e) {
          return error_body(e.what());
        }
        const auto offset = broker_.publish(*topic, payload);
        ordered_json resp;
        resp["ok"] = true;
        resp["offset"] = offset;
        return resp.dump();
      }
      case BrokerOp::Poll: {
        const auto topic = get_string(req, "topic");
        const auto group = get_string(req, "group");
        const auto max_records = get_int(req, "max_records");
        if (!topic || !group || !max_records || *max_records < 0) {
          return error_body("poll requires topic, group, max_records");
        }
        ordered_json records = ordered_json::array();
        for (const auto& r : broker_.poll(*topic, *group, *max_records)) {
          ordered_json e;
          e["offset"] = r.offset;
          e["payload"] = base64_encode(r.payload);
          e["appended_at"] = r.appended_at.to_text();
          records.push_back(std::move(e));
        }
        ordered_json resp;
        resp["ok"] = true;
        resp["records"] = std::move(records);
        return resp.dump();
      }
      case BrokerOp::Commit: {
        const auto topic = get_string(req, "topic");
        const auto group = get_string(req, "group");
        const auto offset = get_int(req, "offset");
        if (!topic || !group || !offset) return error_body("commit requires topic, group, offset");
        if (!broker_.commit(*topic, *group, *offset)) {
          return error_body("offset beyond log length");
        }
        return R"({"ok":true})";
      }
      case BrokerOp::Count: {
        const auto topic = get_string(req, "topic");
        if (!topic) return error_body("count requires topic");
        const auto group = get_string(req, "group");
        ordered_json resp;
        resp["ok"] = true;
        resp["retained"] = broker_.retained_count(*topic, group.value_or(kDefaultConsumerGroup));
        return resp.dump();
      }
      case BrokerOp::Probe:
        return R"({"ok":true})";
    }
  } catch (const BrokerError& e) {
    return error_body(e.what());
  }
  return error_body("unknown opcode " + std::to_string(opcode));
}

BrokerClient::BrokerClient(std::string host, int port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

std::optional<std::string> BrokerClient::round_trip(BrokerOp op, const std::string& body) {
  auto sock = Socket::connect(host_, port_, timeout_);
  if (!sock) return std::nullopt;
  sock->set_recv_timeout(timeout_);
  if (!write_request_frame(*sock, static_cast<std::uint8_t>(op), body)) return std::nullopt;
  if (op == BrokerOp::Publish && publish_bytes_) publish_bytes_(request_frame_bytes(body));
  return read_response_frame(*sock);
}

std::optional<std::int64_t> BrokerClient::publish(const std::string& topic,
                                                  std::string_view payload) {
  ordered_json req;
  req["topic"] = topic;
  req["payload"] = base64_encode(payload);
  const auto resp = round_trip(BrokerOp::Publish, req.dump());
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("offset")) {
    return std::nullopt;
  }
  return j["offset"].get<std::int64_t>();
}

std::optional<std::vector<BrokerRecord>> BrokerClient::poll(const std::string& topic,
                                                            const std::string& group,
                                                            std::int64_t max_records) {
  ordered_json req;
  req["topic"] = topic;
  req["group"] = group;
  req["max_records"] = max_records;
  const auto resp = round_trip(BrokerOp::Poll, req.dump());
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("records") ||
      !j["records"].is_array()) {
    return std::nullopt;
  }
  std::vector<BrokerRecord> out;
  for (const auto& e : j["records"]) {
    BrokerRecord r;
    if (!e.is_object() || !e.contains("offset") || !e.contains("payload")) return std::nullopt;
    r.offset = e["offset"].get<std::int64_t>();
    try {
      r.payload = base64_decode(e["payload"].get<std::string>());
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
    if (e.contains("appended_at") && e["appended_at"].is_string()) {
      if (auto ts = Timestamp::try_from_text(e["appended_at"].get<std::string>())) {
        r.appended_at = *ts;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

bool BrokerClient::commit(const std::string& topic, const std::string& group,
                          std::int64_t offset) {
  ordered_json req;
  req["topic"] = topic;
  req["group"] = group;
  req["offset"] = offset;
  const auto resp = round_trip(BrokerOp::Commit, req.dump());
  if (!resp) return false;
  const json j = json::parse(*resp, nullptr, false);
  return j.is_object() && j.value("ok", false);
}

std::optional<std::int64_t> BrokerClient::retained_count(const std::string& topic,
                                                         const std::string& group) {
  ordered_json req;
  req["topic"] = topic;
  req["group"] = group;
  const auto resp = round_trip(BrokerOp::Count, req.dump());
  if (!resp) return std::nullopt;
  const json j = json::parse(*resp, nullptr, false);
  if (!j.is_object() || j.value("ok", false) != true || !j.contains("retained")) {
    return std::nullopt;
  }
  return j["retained"].get<std::int64_t>();
}

bool BrokerClient::probe() {
  const auto resp = round_trip(BrokerOp::Probe, "{}");
  if (!resp) return false;
  const json j = json::parse(*resp, nullptr, false);
  return j.is_object() && j.value("ok", false);
}

}  // namespace tracesim
