#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "tracesim/store.hpp"
#include "tracesim/wire.hpp"

using namespace tracesim;
using namespace std::chrono_literals;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    std::string tmpl = std::filesystem::temp_directory_path() / "store-test-XXXXXX";
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

NodeDocument doc(const std::string& tail, int x, bool infected, bool alive) {
  NodeDocument d;
  d.uuid = "00000000-0000-4000-8000-0000000000" + tail;
  d.position = {x, x};
  d.infected = infected;
  d.timestamp = Timestamp::from_text("2020-12-05 10:00:00.000000");
  d.alive = alive;
  d.last_updated = d.timestamp;
  return d;
}

}  // namespace

TEST_CASE("upsert keeps one document per uuid, last write wins") {
  TempDir dir;
  StoreState store(dir.path);
  CHECK(store.get_all().empty());

  store.upsert(doc("01", 1, false, true));
  store.upsert(doc("02", 2, true, true));
  CHECK(store.get_all().size() == 2);

  NodeDocument updated = doc("01", 9, true, false);
  store.upsert(updated);
  const auto all = store.get_all();
  REQUIRE(all.size() == 2);
  CHECK(all[0] == updated);  // sorted by uuid, "…01" first

  // Idempotent: applying the identical document again changes nothing.
  store.upsert(updated);
  CHECK(store.get_all() == all);
}

TEST_CASE("snapshots get dense sequences and range reads") {
  TempDir dir;
  StoreState store(dir.path);
  CHECK(store.get_snapshots(0, 10).empty());

  store.upsert(doc("01", 1, false, true));
  CHECK(store.append_snapshot(Timestamp::from_text("2020-12-05 10:00:01.000000")) == 0);
  store.upsert(doc("02", 2, false, true));
  CHECK(store.append_snapshot(Timestamp::from_text("2020-12-05 10:00:02.000000")) == 1);
  store.upsert(doc("03", 3, false, true));
  CHECK(store.append_snapshot(Timestamp::from_text("2020-12-05 10:00:03.000000")) == 2);

  const auto middle = store.get_snapshots(1, 1);
  REQUIRE(middle.size() == 1);
  CHECK(middle[0].sequence == 1);
  CHECK(middle[0].documents.size() == 2);

  CHECK(store.get_snapshots(0, 100).size() == 3);
  CHECK(store.get_snapshots(3, 5).empty());
  CHECK(store.snapshot_count() == 3);
}

TEST_CASE("journal replay reproduces documents and snapshots") {
  TempDir dir;
  {
    StoreState store(dir.path);
    store.upsert(doc("01", 1, false, true));
    store.upsert(doc("02", 2, true, true));
    store.append_snapshot(Timestamp::from_text("2020-12-05 10:00:01.000000"));
    store.upsert(doc("01", 5, true, false));
    store.append_snapshot(Timestamp::from_text("2020-12-05 10:00:02.000000"));
  }
  StoreState reopened(dir.path);
  const auto all = reopened.get_all();
  REQUIRE(all.size() == 2);
  CHECK(all[0].position == Position{5, 5});
  CHECK_FALSE(all[0].alive);

  const auto snaps = reopened.get_snapshots(0, 10);
  REQUIRE(snaps.size() == 2);
  CHECK(snaps[0].documents.size() == 2);
  CHECK(snaps[0].documents[0].position == Position{1, 1});  // pre-update copy
  CHECK(snaps[1].documents[0].position == Position{5, 5});

  // New writes continue the sequence.
  CHECK(reopened.append_snapshot(Timestamp::from_text("2020-12-05 10:00:03.000000")) == 2);
}

TEST_CASE("a torn journal tail is dropped on recovery") {
  TempDir dir;
  {
    StoreState store(dir.path);
    store.upsert(doc("01", 1, false, true));
  }
  {
    std::ofstream journal(dir.path + "/store.journal", std::ios::binary | std::ios::app);
    const char torn[] = {0, 0, 1, 0, '{', '"'};
    journal.write(torn, sizeof torn);
  }
  StoreState reopened(dir.path);
  CHECK(reopened.get_all().size() == 1);
  reopened.upsert(doc("02", 2, false, true));
  StoreState again(dir.path);
  CHECK(again.get_all().size() == 2);
}

TEST_CASE("client/server protocol end to end") {
  TempDir dir;
  StoreServer server({"127.0.0.1", 0, dir.path});
  StoreClient client("127.0.0.1", server.port(), 1000ms);

  CHECK(client.probe());
  CHECK(client.get_all()->empty());

  CHECK(client.upsert(doc("0a", 3, true, true)));
  CHECK(client.upsert(doc("0b", 4, false, false)));
  const auto all = client.get_all();
  REQUIRE(all.has_value());
  CHECK(all->size() == 2);

  const auto seq = client.append_snapshot(Timestamp::from_text("2020-12-05 11:00:00.000000"));
  REQUIRE(seq.has_value());
  CHECK(*seq == 0);
  const auto snaps = client.get_snapshots(0, 10);
  REQUIRE(snaps.has_value());
  REQUIRE(snaps->size() == 1);
  CHECK((*snaps)[0].taken_at.to_text() == "2020-12-05 11:00:00.000000");
  CHECK((*snaps)[0].documents.size() == 2);

  server.stop();
  CHECK_FALSE(client.probe());
  CHECK_FALSE(client.upsert(doc("0c", 5, false, true)));
  CHECK_FALSE(client.get_all().has_value());
}

TEST_CASE("document json round-trips through the store wire format") {
  NodeDocument d = doc("0f", 7, true, false);
  d.contacts.push_back({"11111111-2222-4333-8444-555566667777",
                        Timestamp::from_text("2020-12-05 10:30:00.123456")});
  const auto j = document_to_json(d);
  CHECK(document_from_json(nlohmann::json::parse(j.dump())) == d);
  // Canonical member order.
  const std::string dumped = j.dump();
  CHECK(dumped.find("\"uuid\"") < dumped.find("\"position\""));
  CHECK(dumped.find("\"position\"") < dumped.find("\"infected\""));
  CHECK(dumped.find("\"alive\"") < dumped.find("\"contacts\""));
  CHECK(dumped.find("\"contacts\"") < dumped.find("\"last_updated\""));
}

TEST_CASE("reads stay well-formed while a writer is active") {
  TempDir dir;
  StoreServer server({"127.0.0.1", 0, dir.path});

  std::atomic<bool> done{false};
  std::thread writer([&] {
    StoreClient client("127.0.0.1", server.port(), 1000ms);
    for (int i = 0; i < 120; ++i) {
      client.upsert(doc(i % 2 ? "aa" : "bb", i, i % 3 == 0, true));
    }
    done.store(true);
  });

  StoreClient reader("127.0.0.1", server.port(), 1000ms);
  std::uint64_t reads = 0;
  while (!done.load()) {
    const auto all = reader.get_all();
    REQUIRE(all.has_value());  // never a torn or undecodable document
    for (const auto& d : *all) CHECK(is_valid_node_id(d.uuid));
    ++reads;
  }
  writer.join();
  CHECK(reads > 0);
}
