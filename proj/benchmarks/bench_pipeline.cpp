#include <benchmark/benchmark.h>

#include <filesystem>

#include "tracesim/broker.hpp"
#include "tracesim/store.hpp"
#include "tracesim/wire.hpp"

using namespace tracesim;
using namespace std::chrono_literals;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    std::string tmpl = std::filesystem::temp_directory_path() / "bench-XXXXXX";
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

static void BM_BrokerPublishDurable(benchmark::State& state) {
  TempDir dir;
  Broker broker(dir.path);
  const std::string payload(static_cast<size_t>(state.range(0)), 'x');
  for (auto _ : state) {
    benchmark::DoNotOptimize(broker.publish("bench", payload));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_BrokerPublishDurable)->Arg(137)->Arg(1841);

static void BM_BrokerPublishOverTcp(benchmark::State& state) {
  TempDir dir;
  BrokerServer server({"127.0.0.1", 0, dir.path});
  BrokerClient client("127.0.0.1", server.port(), 1000ms);
  const std::string payload(1841, 'x');
  for (auto _ : state) {
    benchmark::DoNotOptimize(client.publish("bench", payload));
  }
}
BENCHMARK(BM_BrokerPublishOverTcp);

static void BM_BrokerPollBatch(benchmark::State& state) {
  TempDir dir;
  Broker broker(dir.path);
  const std::string payload(1841, 'x');
  for (int i = 0; i < 1000; ++i) broker.publish("bench", payload);
  for (auto _ : state) {
    benchmark::DoNotOptimize(broker.poll("bench", "g", 500));
  }
}
BENCHMARK(BM_BrokerPollBatch);

static void BM_StoreUpsertDurable(benchmark::State& state) {
  TempDir dir;
  StoreState store(dir.path);
  NodeDocument doc;
  doc.uuid = "00000000-0000-4000-8000-000000000001";
  doc.position = {3, 4};
  doc.timestamp = Timestamp::from_text("2020-12-05 10:00:00.000000");
  doc.last_updated = doc.timestamp;
  for (auto _ : state) {
    store.upsert(doc);
  }
}
BENCHMARK(BM_StoreUpsertDurable);

static void BM_BrokerRecovery1k(benchmark::State& state) {
  TempDir dir;
  {
    Broker broker(dir.path);
    const std::string payload(1841, 'x');
    for (int i = 0; i < 1000; ++i) broker.publish("bench", payload);
  }
  for (auto _ : state) {
    Broker reopened(dir.path);
    benchmark::DoNotOptimize(reopened.log_length("bench"));
  }
}
BENCHMARK(BM_BrokerRecovery1k);

BENCHMARK_MAIN();
