#include <benchmark/benchmark.h>

#include "tracesim/rng.hpp"
#include "tracesim/wire.hpp"

using namespace tracesim;

namespace {

ReportMessage make_report(int contacts) {
  RngEngine rng(7);
  ReportMessage r;
  r.uuid = random_uuid(rng);
  r.position = {72, 33};
  r.timestamp = Timestamp::from_text("2020-12-05 09:43:21.654321");
  for (int i = 0; i < contacts; ++i) {
    r.contacts.push_back({random_uuid(rng), r.timestamp});
  }
  return r;
}

}  // namespace

static void BM_EncodeBroadcast(benchmark::State& state) {
  const BroadcastMessage m = make_report(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_broadcast(m));
  }
}
BENCHMARK(BM_EncodeBroadcast);

static void BM_DecodeBroadcast(benchmark::State& state) {
  const std::string payload = encode_broadcast(make_report(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_broadcast(payload));
  }
}
BENCHMARK(BM_DecodeBroadcast);

static void BM_EncodeReport(benchmark::State& state) {
  const ReportMessage r = make_report(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_report(r));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(encode_report(r).size()));
}
BENCHMARK(BM_EncodeReport)->Arg(0)->Arg(19)->Arg(100);

static void BM_DecodeReport(benchmark::State& state) {
  const std::string payload = encode_report(make_report(static_cast<int>(state.range(0))));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_report(payload));
  }
}
BENCHMARK(BM_DecodeReport)->Arg(0)->Arg(19);

static void BM_StepPosition(benchmark::State& state) {
  RngEngine rng(3);
  RunParameters params;
  Position p{50, 50};
  for (auto _ : state) {
    p = step_position(p, params, rng);
    benchmark::DoNotOptimize(p);
  }
}
BENCHMARK(BM_StepPosition);
