#include "tracesim/api.hpp"

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tracesim/model.hpp"
#include "tracesim/store.hpp"
#include "tracesim/wire.hpp"

namespace tracesim {

using nlohmann::ordered_json;

namespace {

constexpr char kUnavailableBody[] = R"({"error":"unavailable"})";
constexpr char kJsonType[] = "application/json";

std::optional<std::int64_t> parse_int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string raw = req.get_param_value(name);
  if (raw.empty()) return std::nullopt;
  std::int64_t value = 0;
  for (const char c : raw) {
    if (c < '0' || c > '9') return std::nullopt;
    value = value * 10 + (c - '0');
    if (value > 10'000'000) return std::nullopt;
  }
  return value;
}

}  // namespace

struct ApiServer::Impl {
  Options options;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Impl(Options opts) : options(std::move(opts)) {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", kJsonType);
    });

    server.Get("/data", [this](const httplib::Request&, httplib::Response& res) {
      StoreClient store(options.store_host, options.store_port, options.store_timeout);
      const auto docs = store.get_all();
      if (!docs) {
        res.status = 503;
        res.set_content(kUnavailableBody, kJsonType);
        return;
      }
      ordered_json nodes = ordered_json::array();
      for (const auto& d : *docs) nodes.push_back(document_to_json(d));
      const Stats stats = compute_stats(*docs);
      ordered_json body;
      body["nodes"] = std::move(nodes);
      body["stats"] = stats_to_json(stats);
      res.set_content(body.dump(), kJsonType);
    });

    server.Get("/snapshots", [this](const httplib::Request& req, httplib::Response& res) {
      const auto from = parse_int_param(req, "from");
      const auto limit = parse_int_param(req, "limit");
      if (!from || !limit || *from < 0 || *limit < 1 || *limit > 1000) {
        res.status = 400;
        res.set_content(R"({"error":"invalid parameters"})", kJsonType);
        return;
      }
      StoreClient store(options.store_host, options.store_port, options.store_timeout);
      const auto snaps = store.get_snapshots(*from, *limit);
      if (!snaps) {
        res.status = 503;
        res.set_content(kUnavailableBody, kJsonType);
        return;
      }
      ordered_json arr = ordered_json::array();
      for (const auto& s : *snaps) {
        ordered_json e;
        e["sequence"] = s.sequence;
        e["taken_at"] = s.taken_at.to_text();
        e["stats"] = stats_to_json(compute_stats(s.documents));
        ordered_json nodes = ordered_json::array();
        for (const auto& d : s.documents) nodes.push_back(document_to_json(d));
        e["nodes"] = std::move(nodes);
        arr.push_back(std::move(e));
      }
      ordered_json body;
      body["snapshots"] = std::move(arr);
      res.set_content(body.dump(), kJsonType);
    });

    port = options.port == 0 ? server.bind_to_any_port(options.host)
                             : (server.bind_to_port(options.host, options.port) ? options.port : -1);
    if (port <= 0) throw std::runtime_error("api: cannot bind " + options.host);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~Impl() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

ApiServer::ApiServer(Options options) : impl_(std::make_unique<Impl>(std::move(options))) {}

ApiServer::~ApiServer() = default;

int ApiServer::port() const { return impl_->port; }

void ApiServer::stop() { impl_.reset(); }

}  // namespace tracesim
