// Acceptance suite: one criterion per function, one PASS/FAIL line each,
// nonzero exit if anything fails. Criteria marked "exact" use equality
// checks; tolerances are pinned inline where a band applies.

#include <csignal>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracesim/broker.hpp"
#include "tracesim/consumer.hpp"
#include "tracesim/harness.hpp"
#include "tracesim/store.hpp"
#include "tracesim/wire.hpp"

using namespace tracesim;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct TempDir {
  std::string path;
  TempDir() {
    std::string tmpl = std::filesystem::temp_directory_path() / "acceptance-XXXXXX";
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

/// Reports per node in tick order, straight from the broker log.
std::map<NodeId, std::vector<ReportMessage>> reports_by_node(const std::string& log_path) {
  std::map<NodeId, std::vector<ReportMessage>> out;
  for (const auto& payload : read_topic_log(log_path)) {
    ReportMessage r = decode_report(payload);
    out[r.uuid].push_back(std::move(r));
  }
  return out;
}

bool assertion_passed(const RunReport& report, const std::string& name, std::string* detail) {
  for (const auto& a : report.assertions) {
    if (a.name == name) {
      if (detail) *detail = a.detail;
      return a.passed;
    }
  }
  if (detail) *detail = "assertion '" + name + "' missing";
  return false;
}

// ---------------------------------------------------------------------------
// 1. Epidemic cycle on a deterministic 2-node run.
// ---------------------------------------------------------------------------

Outcome criterion_epidemic_cycle() {
  TempDir dir;
  RunSpec spec;
  spec.node_count = 2;
  spec.infected_count = 1;
  spec.duration_seconds = 36;
  spec.seed = 424242;
  spec.params.field_width = 2;   // radius 2 covers the whole field: every
  spec.params.field_height = 2;  // broadcast is an in-range contact
  spec.params.infection_radius = 2;
  spec.params.infection_cooldown = 15;
  spec.params.zombie_lifetime = 120;
  spec.out_dir = dir.path;
  spec.export_frames = false;

  const RunReport report = run(spec);
  require(report.passed, "run assertions failed");

  auto by_node = reports_by_node(report.broker_log_path);
  require(by_node.size() == 2, "expected reports from both nodes");
  const NodeId a = report.node_ids[0];  // starts infected
  const NodeId b = report.node_ids[1];
  const auto& ra = by_node.at(a);
  const auto& rb = by_node.at(b);
  require(ra.size() == 36 && rb.size() == 36, "expected one report per tick per node");

  // The initially safe node turns infected on its first in-range contact
  // (every contact is in range on this field).
  std::int64_t tb = -1;
  for (size_t t = 0; t < rb.size(); ++t) {
    if (!rb[t].contacts.empty()) {
      tb = static_cast<std::int64_t>(t);
      break;
    }
  }
  require(tb >= 0, "the safe node never heard a contact");
  for (std::int64_t t = 0; t < tb; ++t) {
    require(!rb[static_cast<size_t>(t)].infected, "infected before any contact");
  }
  require(rb[static_cast<size_t>(tb)].infected, "first in-range contact did not infect");

  // Both infected nodes hold their position for exactly 15 consecutive
  // reports, then move and report infected=false.
  auto check_cycle = [&](const std::vector<ReportMessage>& reports, std::int64_t start) {
    for (std::int64_t t = start; t < start + 15; ++t) {
      const auto& r = reports[static_cast<size_t>(t)];
      require(r.position == reports[static_cast<size_t>(start)].position,
              "moved during the stationary window");
      require(r.infected, "cured early");
    }
    const auto& cured = reports[static_cast<size_t>(start + 15)];
    require(!(cured.position == reports[static_cast<size_t>(start)].position),
            "did not move after curing");
    require(!cured.infected, "still infected after the cooldown");
  };
  check_cycle(ra, 0);
  check_cycle(rb, tb);

  // During its immune window the cured node keeps hearing an infected
  // neighbor and never reinfects.
  bool exposed_while_immune = false;
  for (std::int64_t t = 16; t < 30; ++t) {
    const auto& r = ra[static_cast<size_t>(t)];
    bool heard_b = false;
    for (const auto& c : r.contacts) heard_b |= c.uuid == b;
    if (heard_b && rb[static_cast<size_t>(t - 1)].infected) exposed_while_immune = true;
  }
  require(exposed_while_immune, "no infected contact landed inside the immune window");
  for (std::int64_t t = 15; t < 36; ++t) {
    require(!ra[static_cast<size_t>(t)].infected, "reinfected during or after immunity");
  }

  return {true, "infection at tick " + std::to_string(tb) +
                    ", 15-report stationary windows, immune contact ignored"};
}

// ---------------------------------------------------------------------------
// 2. Batch aggregation: 25 reports, death at the 13th.
// ---------------------------------------------------------------------------

Outcome criterion_batch_aggregation() {
  TempDir broker_dir, store_dir;
  SimClock clock;
  BrokerServer broker({"127.0.0.1", 0, broker_dir.path});
  StoreServer store({"127.0.0.1", 0, store_dir.path});
  BrokerClient producer("127.0.0.1", broker.port(), 1000ms);
  Consumer consumer(ConsumerConfig{}, "127.0.0.1", broker.port(), "127.0.0.1", store.port(),
                    &clock);

  for (int i = 0; i < 25; ++i) {
    ReportMessage r;
    char uuid[40];
    std::snprintf(uuid, sizeof uuid, "%08x-0000-4000-8000-000000000000", i);
    r.uuid = uuid;
    r.position = {i, 0};
    r.timestamp = Timestamp(SimClock::default_epoch() + i * kMicrosPerSecond);
    r.alive = i != 12;  // the 13th report is a death
    require(producer.publish(kDefaultTopic, encode_report(r)).has_value(), "publish failed");
  }
  consumer.step();

  // Journal shows batches of 10, 3 (sealed by the death), 10.
  std::vector<int> sizes;
  int running = 0;
  bool death_sealed_second_batch = false;
  int upserts_seen = 0;
  for (const auto& entry : read_topic_log(store_dir.path + "/store.journal")) {
    const auto j = nlohmann::json::parse(entry);
    if (j.at("op") == "upsert") {
      ++running;
      ++upserts_seen;
      if (upserts_seen == 13) {
        death_sealed_second_batch = j.at("document").at("alive") == false;
      }
    } else {
      sizes.push_back(running);
      running = 0;
    }
  }
  require(sizes == std::vector<int>{10, 3, 10}, "batch sizes are not [10, 3, 10]");
  require(running == 0, "upserts written outside a batch");
  require(death_sealed_second_batch, "the 3-report batch was not sealed by the death");

  // Committed offset is exactly 23: the next poll for the consumer group
  // starts there, and two reports remain retained.
  const auto next = producer.poll(kDefaultTopic, kDefaultConsumerGroup, 10);
  require(next.has_value() && next->size() == 2, "expected 2 pending records");
  require((*next)[0].offset == 23, "next offset for the group is not 23");
  require(producer.retained_count(kDefaultTopic) == 2, "retained count is not 2");

  return {true, "batches [10, 3, 10], committed offset 23, 2 pending"};
}

// ---------------------------------------------------------------------------
// 3. Fault matrix: the six outage scenarios.
// ---------------------------------------------------------------------------

Outcome criterion_fault_matrix() {
  std::string detail;

  auto scenario = [&](const std::string& name, RunSpec spec,
                      const std::vector<std::string>& must_pass) {
    TempDir dir;
    spec.out_dir = dir.path;
    spec.export_frames = false;
    const RunReport report = run(spec);
    require(report.passed, name + ": run assertions failed");
    for (const auto& assertion : must_pass) {
      std::string d;
      require(assertion_passed(report, assertion, &d), name + ": " + assertion + " (" + d + ")");
    }
    detail += name + " ";
  };

  RunSpec base;
  base.node_count = 3;
  base.infected_count = 1;
  base.duration_seconds = 16;
  base.params.field_width = 4;
  base.params.field_height = 4;

  RunSpec store_down = base;
  store_down.seed = 31;
  store_down.faults = {parse_fault("kill:store@4"), parse_fault("restore:store@9")};
  scenario("store-down", store_down,
           {"store-down-data-unavailable-opaque", "oracle-documents-match",
            "oracle-snapshot-stats-match", "retained-matches-unsealed-tail"});

  RunSpec consumer_down = base;
  consumer_down.seed = 37;
  consumer_down.faults = {parse_fault("kill:consumer@4"), parse_fault("restore:consumer@10")};
  scenario("consumer-down", consumer_down,
           {"consumer-down-retention", "oracle-documents-match"});

  RunSpec broker_down = base;
  broker_down.seed = 41;
  broker_down.faults = {parse_fault("kill:broker@5"), parse_fault("restore:broker@9")};
  scenario("broker-down", broker_down,
           {"contact-conservation", "movement-loss-no-outage-positions",
            "report-positions-match-trace", "oracle-documents-match"});

  RunSpec node_kill = base;
  node_kill.seed = 43;
  node_kill.params.zombie_lifetime = 12;
  node_kill.faults = {parse_fault("kill:node:1@3")};
  scenario("node-kill", node_kill,
           {"node-kill-no-death-report", "natural-deaths-recorded", "contact-conservation",
            "oracle-documents-match"});

  RunSpec node_add = base;
  node_add.seed = 47;
  node_add.faults = {parse_fault("spawn:node@5")};
  scenario("node-add", node_add, {"node-add-contacts-within-2-ticks", "oracle-documents-match"});

  RunSpec api_down = base;
  api_down.seed = 53;
  api_down.faults = {parse_fault("kill:api@3"), parse_fault("restore:api@6"),
                     parse_fault("kill:store@8"), parse_fault("restore:store@11")};
  scenario("api-down", api_down,
           {"api-down-connection-refused", "store-down-data-unavailable-opaque"});

  return {true, detail};
}

// ---------------------------------------------------------------------------
// 4. Traffic arithmetic against the reference capture.
// ---------------------------------------------------------------------------

Outcome criterion_traffic() {
  TempDir dir;
  RunSpec spec;
  spec.node_count = 20;
  spec.infected_count = 1;
  spec.duration_seconds = 120;
  spec.seed = 2020;
  spec.out_dir = dir.path;
  spec.export_frames = false;

  const RunReport report = run(spec);
  require(report.passed, "run assertions failed");

  std::string detail;
  for (const auto& row : report.traffic_rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%s: %.0f vs %.0f [%.0f, %.0f] %s; ", row.name.c_str(),
                  row.measured, row.reference, row.band_lo, row.band_hi,
                  row.passed ? "ok" : "OUT");
    detail += line;
    require(row.passed, row.name + " out of band");
  }
  return {true, detail};
}

// ---------------------------------------------------------------------------
// 5. Oracle equivalence on a randomized faulted run.
// ---------------------------------------------------------------------------

Outcome criterion_oracle_equivalence() {
  const auto seed = static_cast<std::uint64_t>(
      std::chrono::system_clock::now().time_since_epoch().count());

  TempDir dir;
  RunSpec spec;
  spec.node_count = 10;
  spec.infected_count = 2;
  spec.duration_seconds = 60;
  spec.seed = seed;
  spec.out_dir = dir.path;
  spec.export_frames = false;
  spec.faults = {parse_fault("kill:broker@20"), parse_fault("restore:broker@30")};

  const RunReport report = run(spec);
  std::string d1, d2;
  require(assertion_passed(report, "oracle-documents-match", &d1),
          "documents diverge (seed " + std::to_string(seed) + "): " + d1);
  require(assertion_passed(report, "oracle-snapshot-stats-match", &d2),
          "snapshot stats diverge (seed " + std::to_string(seed) + "): " + d2);
  require(report.passed, "run assertions failed (seed " + std::to_string(seed) + ")");

  return {true, "seed " + std::to_string(seed) + "; " + d1 + "; " + d2};
}

// ---------------------------------------------------------------------------
// 6. Broker durability under a hard kill.
// ---------------------------------------------------------------------------

struct Daemon {
  pid_t pid = -1;
  int out_fd = -1;

  static Daemon spawn(const std::vector<std::string>& args) {
    int fds[2];
    require(pipe(fds) == 0, "pipe failed");
    Daemon d;
    d.pid = fork();
    require(d.pid >= 0, "fork failed");
    if (d.pid == 0) {
      dup2(fds[1], STDOUT_FILENO);
      close(fds[0]);
      close(fds[1]);
      std::vector<char*> argv;
      for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      execv(argv[0], argv.data());
      _exit(127);
    }
    close(fds[1]);
    d.out_fd = fds[0];
    return d;
  }

  std::string read_line() {
    std::string line;
    char c;
    while (read(out_fd, &c, 1) == 1) {
      if (c == '\n') break;
      line.push_back(c);
    }
    return line;
  }

  void kill_hard() {
    ::kill(pid, SIGKILL);
    waitpid(pid, nullptr, 0);
    close(out_fd);
  }

  void terminate() {
    ::kill(pid, SIGTERM);
    waitpid(pid, nullptr, 0);
    close(out_fd);
  }
};

int parse_port(const std::string& listening_line) {
  const auto colon = listening_line.rfind(':');
  require(colon != std::string::npos, "no port in: " + listening_line);
  return std::stoi(listening_line.substr(colon + 1));
}

Outcome criterion_broker_durability() {
  const char* cli = TRACESIM_CLI_PATH;
  TempDir dir;
  const std::uint64_t seed =
      static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  std::mt19937_64 rng(seed);

  Daemon broker = Daemon::spawn({cli, "broker", "--port", "0", "--data-dir", dir.path});
  const int port = parse_port(broker.read_line());

  std::map<std::int64_t, std::string> acked;
  std::thread killer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20 + rng() % 400));
    broker.kill_hard();
  });

  {
    BrokerClient client("127.0.0.1", port, 500ms);
    for (int i = 0; i < 1000; ++i) {
      std::string payload = "payload-" + std::to_string(i) + "-";
      for (int k = 0; k < 16; ++k) payload.push_back(static_cast<char>('a' + i * 7 % 26));
      const auto offset = client.publish(kDefaultTopic, payload);
      if (!offset) break;  // the kill landed
      acked[*offset] = payload;
    }
  }
  killer.join();

  Daemon restarted = Daemon::spawn({cli, "broker", "--port", "0", "--data-dir", dir.path});
  const int port2 = parse_port(restarted.read_line());
  BrokerClient client("127.0.0.1", port2, 1000ms);
  const auto records = client.poll(kDefaultTopic, "audit", 5000);
  restarted.terminate();

  require(records.has_value(), "restarted broker unreachable");
  std::map<std::int64_t, std::string> recovered;
  for (size_t i = 0; i < records->size(); ++i) {
    require((*records)[i].offset == static_cast<std::int64_t>(i),
            "offset gap at " + std::to_string(i));
    recovered[(*records)[i].offset] = (*records)[i].payload;
  }
  const std::int64_t max_acked = acked.empty() ? -1 : acked.rbegin()->first;
  require(static_cast<std::int64_t>(records->size()) - 1 >= max_acked,
          "acknowledged records missing after restart");
  for (const auto& [offset, payload] : acked) {
    require(recovered.at(offset) == payload,
            "payload mismatch at offset " + std::to_string(offset));
  }

  return {true, std::to_string(acked.size()) + " acked, " + std::to_string(records->size()) +
                    " recovered, kill seed " + std::to_string(seed)};
}

// ---------------------------------------------------------------------------
// 7. Determinism: identical specs, byte-identical logs.
// ---------------------------------------------------------------------------

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Outcome criterion_determinism() {
  TempDir dir;
  RunSpec spec;
  spec.node_count = 10;
  spec.infected_count = 3;
  spec.duration_seconds = 30;
  spec.seed = 31337;
  spec.params.field_width = 12;
  spec.params.field_height = 12;
  spec.export_frames = false;
  spec.faults = {parse_fault("kill:broker@8"), parse_fault("restore:broker@12")};

  RunSpec a = spec, b = spec;
  a.out_dir = dir.path + "/a";
  b.out_dir = dir.path + "/b";
  const RunReport ra = run(a);
  const RunReport rb = run(b);
  require(ra.passed && rb.passed, "runs failed their assertions");

  const std::string bytes_a = file_bytes(ra.broker_log_path);
  const std::string bytes_b = file_bytes(rb.broker_log_path);
  require(!bytes_a.empty(), "empty broker log");
  require(bytes_a == bytes_b, "broker logs differ");

  const auto hash = std::hash<std::string>{}(bytes_a);
  return {true, std::to_string(bytes_a.size()) + " log bytes, hash " + std::to_string(hash)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> fn;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria = {
      {"1. epidemic-cycle", criterion_epidemic_cycle, 5},
      {"2. batch-aggregation", criterion_batch_aggregation, 60},
      {"3. fault-matrix", criterion_fault_matrix, 120},
      {"4. traffic-arithmetic", criterion_traffic, 60},
      {"5. oracle-equivalence", criterion_oracle_equivalence, 60},
      {"6. broker-durability", criterion_broker_durability, 30},
      {"7. determinism", criterion_determinism, 60},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criterion.fn();
    } catch (const std::exception& e) {
      outcome = {false, e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (outcome.passed && elapsed > criterion.budget_seconds) {
      outcome.passed = false;
      outcome.detail += " (over the " + std::to_string(criterion.budget_seconds) + "s budget)";
    }
    std::printf("%s  %-24s (%.2fs)  %s\n", outcome.passed ? "PASS" : "FAIL", criterion.name,
                elapsed, outcome.detail.c_str());
    std::fflush(stdout);
    failures += outcome.passed ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
