#pragma once

#include <chrono>
#include <memory>
#include <string>

namespace tracesim {

inline constexpr int kDefaultApiPort = 8080;

/// HTTP/1.1 query front over the store:
///   GET /data        -> {"nodes":[...], "stats":{...}}
///   GET /snapshots?from=N&limit=M -> {"snapshots":[...]}, 1 <= M <= 1000
///   GET /health      -> {"status":"ok"} whenever the process is up
/// When the store is unreachable the data endpoints answer
/// 503 {"error":"unavailable"} — deliberately silent about which component
/// failed.
class ApiServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 = ephemeral
    std::string store_host = "127.0.0.1";
    int store_port = 0;
    std::chrono::milliseconds store_timeout{1500};
  };

  explicit ApiServer(Options options);
  ~ApiServer();

  int port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tracesim
