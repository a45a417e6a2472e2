// tracesim — contact-tracing pipeline simulator.
//
// Harness commands: run, replay-oracle, export-frames, measure.
// Component daemons for manual multi-process setups: broker, store,
// consumer, api, node.

#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tracesim/agent.hpp"
#include "tracesim/api.hpp"
#include "tracesim/broker.hpp"
#include "tracesim/consumer.hpp"
#include "tracesim/harness.hpp"
#include "tracesim/log.hpp"
#include "tracesim/rng.hpp"
#include "tracesim/store.hpp"
#include "tracesim/wire.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

void wait_for_signal() {
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

struct HostPort {
  std::string host = "127.0.0.1";
  int port = 0;
};

HostPort parse_host_port(const std::string& text, int default_port) {
  HostPort hp;
  hp.port = default_port;
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    hp.host = text.empty() ? "127.0.0.1" : text;
  } else {
    hp.host = text.substr(0, colon);
    hp.port = std::stoi(text.substr(colon + 1));
  }
  if (hp.host.empty()) hp.host = "127.0.0.1";
  return hp;
}

void print_traffic_rows(const std::vector<tracesim::TrafficComparisonRow>& rows) {
  std::printf("%-32s %12s %12s %12s %12s  %s\n", "metric", "measured", "reference", "band lo",
              "band hi", "result");
  for (const auto& row : rows) {
    std::printf("%-32s %12.1f %12.1f %12.1f %12.1f  %s\n", row.name.c_str(), row.measured,
                row.reference, row.band_lo, row.band_hi, row.passed ? "PASS" : "FAIL");
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace tracesim;

  CLI::App app{"contact-tracing pipeline simulator"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand too

  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "debug|info|warn|error")->capture_default_str();

  // ---- run ------------------------------------------------------------------
  auto* cmd_run = app.add_subcommand("run", "run a full simulation with fault injection");
  RunSpec spec;
  std::string params_file, mode = "deterministic", transport = "inmemory";
  std::vector<std::string> fault_texts;
  double hearing_radius = -1;
  bool no_frames = false;
  cmd_run->add_option("--params", params_file, "parameters JSON file");
  cmd_run->add_option("--field-width", spec.params.field_width);
  cmd_run->add_option("--field-height", spec.params.field_height);
  cmd_run->add_option("--scale-factor", spec.params.scale_factor);
  cmd_run->add_option("--zombie-lifetime", spec.params.zombie_lifetime);
  cmd_run->add_option("--infection-radius", spec.params.infection_radius);
  cmd_run->add_option("--infection-cooldown", spec.params.infection_cooldown);
  cmd_run->add_option("--nodes", spec.node_count)->capture_default_str();
  cmd_run->add_option("--infected", spec.infected_count)->capture_default_str();
  cmd_run->add_option("--duration", spec.duration_seconds)->capture_default_str();
  cmd_run->add_option("--seed", spec.seed)->capture_default_str();
  cmd_run->add_option("--mode", mode, "deterministic|realtime")->capture_default_str();
  cmd_run->add_option("--transport", transport, "inmemory|udp")->capture_default_str();
  cmd_run->add_option("--broadcast-port", spec.transport.broadcast_port)->capture_default_str();
  cmd_run->add_option("--hearing-radius", hearing_radius, "cells; omit for unlimited");
  cmd_run->add_option("--loss", spec.transport.loss_probability, "in-memory loss probability");
  cmd_run->add_option("--fault", fault_texts, "e.g. kill:broker@10 restore:broker@20 kill:node:2@5 spawn:node@30");
  cmd_run->add_option("--topic", spec.topic)->capture_default_str();
  cmd_run->add_option("--out", spec.out_dir, "artifact directory (temp dir if omitted)");
  cmd_run->add_option("--tick-interval", spec.tick_interval)->capture_default_str();
  cmd_run->add_flag("--no-frames", no_frames, "skip frame export");

  // ---- replay-oracle ----------------------------------------------------------
  auto* cmd_oracle = app.add_subcommand("replay-oracle", "replay a broker log into oracle state");
  std::string oracle_log;
  int oracle_batch = 10;
  cmd_oracle->add_option("--log", oracle_log, "topic log file")->required();
  cmd_oracle->add_option("--batch-limit", oracle_batch)->capture_default_str();

  // ---- export-frames -----------------------------------------------------------
  auto* cmd_frames = app.add_subcommand("export-frames", "dump per-snapshot frames from the API");
  std::string frames_api = "127.0.0.1:8080", frames_out = "frames";
  int frames_scale = 5;
  cmd_frames->add_option("--api", frames_api, "API host:port")->capture_default_str();
  cmd_frames->add_option("--out", frames_out)->capture_default_str();
  cmd_frames->add_option("--scale-factor", frames_scale)->capture_default_str();

  // ---- measure ------------------------------------------------------------------
  auto* cmd_measure = app.add_subcommand("measure", "traffic measurement against the reference");
  int measure_nodes = 20;
  std::int64_t measure_duration = 120;
  std::uint64_t measure_seed = 1;
  std::string measure_out;
  cmd_measure->add_option("--nodes", measure_nodes)->capture_default_str();
  cmd_measure->add_option("--duration", measure_duration)->capture_default_str();
  cmd_measure->add_option("--seed", measure_seed)->capture_default_str();
  cmd_measure->add_option("--out", measure_out);

  // ---- daemons --------------------------------------------------------------------
  auto* cmd_broker = app.add_subcommand("broker", "run the broker daemon");
  std::string broker_host = "127.0.0.1", broker_dir = "broker-data";
  int broker_port = kDefaultBrokerPort;
  cmd_broker->add_option("--host", broker_host)->capture_default_str();
  cmd_broker->add_option("--port", broker_port, "0 = ephemeral")->capture_default_str();
  cmd_broker->add_option("--data-dir", broker_dir)->capture_default_str();

  auto* cmd_store = app.add_subcommand("store", "run the store daemon");
  std::string store_host = "127.0.0.1", store_dir = "store-data";
  int store_port = kDefaultStorePort;
  cmd_store->add_option("--host", store_host)->capture_default_str();
  cmd_store->add_option("--port", store_port, "0 = ephemeral")->capture_default_str();
  cmd_store->add_option("--data-dir", store_dir)->capture_default_str();

  auto* cmd_consumer = app.add_subcommand("consumer", "run the DB consumer");
  std::string consumer_broker = "127.0.0.1:9092", consumer_store = "127.0.0.1:27018";
  std::string consumer_topic = kDefaultTopic, consumer_group = kDefaultConsumerGroup;
  cmd_consumer->add_option("--broker", consumer_broker)->capture_default_str();
  cmd_consumer->add_option("--store", consumer_store)->capture_default_str();
  cmd_consumer->add_option("--topic", consumer_topic)->capture_default_str();
  cmd_consumer->add_option("--group", consumer_group)->capture_default_str();

  auto* cmd_api = app.add_subcommand("api", "run the HTTP API");
  std::string api_host = "127.0.0.1", api_store = "127.0.0.1:27018";
  int api_port = kDefaultApiPort;
  cmd_api->add_option("--host", api_host)->capture_default_str();
  cmd_api->add_option("--port", api_port, "0 = ephemeral")->capture_default_str();
  cmd_api->add_option("--store", api_store)->capture_default_str();

  auto* cmd_node = app.add_subcommand("node", "run one standalone node agent (UDP transport)");
  std::string node_id, node_params_file, node_broker = "127.0.0.1:9092";
  bool node_infected = false;
  int node_port = 4711;
  double node_tick = 1.0;
  std::uint64_t node_seed = 0;
  std::string node_topic = kDefaultTopic;
  cmd_node->add_option("--id", node_id, "canonical uuid; generated when omitted");
  cmd_node->add_flag("--infected", node_infected, "start infected");
  cmd_node->add_option("--params", node_params_file, "parameters JSON file");
  cmd_node->add_option("--broker", node_broker)->capture_default_str();
  cmd_node->add_option("--broadcast-port", node_port)->capture_default_str();
  cmd_node->add_option("--tick-interval", node_tick)->capture_default_str();
  cmd_node->add_option("--seed", node_seed, "0 = from OS entropy");
  cmd_node->add_option("--topic", node_topic)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (log_level == "debug") set_log_level(LogLevel::Debug);
  else if (log_level == "info") set_log_level(LogLevel::Info);
  else if (log_level == "warn") set_log_level(LogLevel::Warn);
  else if (log_level == "error") set_log_level(LogLevel::Error);

  try {
    if (*cmd_run) {
      if (!params_file.empty()) {
        // File first, explicit flags override.
        const RunParameters flags = spec.params;
        spec.params = params_from_file(params_file);
        if (cmd_run->count("--field-width")) spec.params.field_width = flags.field_width;
        if (cmd_run->count("--field-height")) spec.params.field_height = flags.field_height;
        if (cmd_run->count("--scale-factor")) spec.params.scale_factor = flags.scale_factor;
        if (cmd_run->count("--zombie-lifetime")) spec.params.zombie_lifetime = flags.zombie_lifetime;
        if (cmd_run->count("--infection-radius")) spec.params.infection_radius = flags.infection_radius;
        if (cmd_run->count("--infection-cooldown")) spec.params.infection_cooldown = flags.infection_cooldown;
      }
      spec.mode = mode == "realtime" ? RunMode::Realtime : RunMode::Deterministic;
      spec.transport.mode = transport == "udp" ? TransportMode::Udp : TransportMode::InMemory;
      if (hearing_radius >= 0) spec.transport.hearing_radius = hearing_radius;
      spec.export_frames = !no_frames;
      for (const auto& text : fault_texts) spec.faults.push_back(parse_fault(text));

      const RunReport report = run(spec);
      std::cout << report.to_json().dump(2) << "\n";
      for (const auto& a : report.assertions) {
        std::fprintf(stderr, "%s  %s — %s\n", a.passed ? "PASS" : "FAIL", a.name.c_str(),
                     a.detail.c_str());
      }
      return report.passed ? 0 : 1;
    }

    if (*cmd_oracle) {
      const OracleState state = replay_oracle(oracle_log, oracle_batch);
      nlohmann::ordered_json j;
      j["applied_reports"] = state.applied_reports;
      j["unsealed_tail"] = state.unsealed_tail;
      j["malformed"] = state.malformed;
      nlohmann::ordered_json docs = nlohmann::ordered_json::array();
      for (const auto& d : state.documents) docs.push_back(document_to_json(d));
      j["documents"] = std::move(docs);
      nlohmann::ordered_json stats = nlohmann::ordered_json::array();
      for (const auto& s : state.snapshot_stats) stats.push_back(stats_to_json(s));
      j["snapshot_stats"] = std::move(stats);
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (*cmd_frames) {
      const HostPort api = parse_host_port(frames_api, kDefaultApiPort);
      const int count = export_frames(api.host, api.port, frames_out, frames_scale);
      std::fprintf(stderr, "wrote %d frames to %s\n", count, frames_out.c_str());
      return 0;
    }

    if (*cmd_measure) {
      RunSpec mspec;
      mspec.node_count = measure_nodes;
      mspec.infected_count = measure_nodes > 0 ? 1 : 0;
      mspec.duration_seconds = measure_duration;
      mspec.seed = measure_seed;
      mspec.out_dir = measure_out;
      mspec.export_frames = false;
      const RunReport report = run(mspec);
      print_traffic_rows(report.traffic_rows);
      std::cout << report.metrics.to_json().dump(2) << "\n";
      const bool ok = std::all_of(report.traffic_rows.begin(), report.traffic_rows.end(),
                                  [](const auto& r) { return r.passed; });
      return ok && report.passed ? 0 : 1;
    }

    if (*cmd_broker) {
      install_signal_handlers();
      BrokerServer server({broker_host, broker_port, broker_dir});
      std::printf("listening on %s:%d\n", broker_host.c_str(), server.port());
      std::fflush(stdout);
      wait_for_signal();
      server.stop();
      return 0;
    }

    if (*cmd_store) {
      install_signal_handlers();
      StoreServer server({store_host, store_port, store_dir});
      std::printf("listening on %s:%d\n", store_host.c_str(), server.port());
      std::fflush(stdout);
      wait_for_signal();
      server.stop();
      return 0;
    }

    if (*cmd_consumer) {
      install_signal_handlers();
      const HostPort broker = parse_host_port(consumer_broker, kDefaultBrokerPort);
      const HostPort store = parse_host_port(consumer_store, kDefaultStorePort);
      WallClock clock;
      Consumer consumer({consumer_topic, consumer_group}, broker.host, broker.port, store.host,
                        store.port, &clock);
      consumer.start();
      std::printf("consuming %s from %s:%d into %s:%d\n", consumer_topic.c_str(),
                  broker.host.c_str(), broker.port, store.host.c_str(), store.port);
      std::fflush(stdout);
      wait_for_signal();
      consumer.stop();
      return 0;
    }

    if (*cmd_api) {
      install_signal_handlers();
      const HostPort store = parse_host_port(api_store, kDefaultStorePort);
      ApiServer server({api_host, api_port, store.host, store.port});
      std::printf("listening on %s:%d\n", api_host.c_str(), server.port());
      std::fflush(stdout);
      wait_for_signal();
      server.stop();
      return 0;
    }

    if (*cmd_node) {
      install_signal_handlers();
      AgentConfig config;
      config.id = node_id.empty() ? random_uuid() : node_id;
      config.start_infected = node_infected;
      if (!node_params_file.empty()) config.params = params_from_file(node_params_file);
      config.tick_interval = node_tick;
      config.rng_seed = node_seed != 0 ? node_seed : std::random_device{}();
      config.topic = node_topic;

      TransportConfig tconfig;
      tconfig.mode = TransportMode::Udp;
      tconfig.broadcast_port = node_port;
      const HostPort broker = parse_host_port(node_broker, kDefaultBrokerPort);

      WallClock clock;
      Agent agent(config, std::make_unique<UdpTransport>(tconfig),
                  std::make_unique<BrokerClient>(broker.host, broker.port), &clock);
      std::printf("node %s up (infected=%s)\n", config.id.c_str(),
                  node_infected ? "true" : "false");
      std::fflush(stdout);
      agent.start();
      while (!g_stop && !agent.finished()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      agent.stop();
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
