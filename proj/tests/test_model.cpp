#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "tracesim/model.hpp"
#include "tracesim/time.hpp"

using namespace tracesim;

namespace {

constexpr SimMicros secs(std::int64_t s) { return s * kMicrosPerSecond; }

RunParameters params_with(int w, int h) {
  RunParameters p;
  p.field_width = w;
  p.field_height = h;
  return p;
}

}  // namespace

TEST_CASE("run parameter defaults and validation") {
  RunParameters p;
  CHECK(p.field_width == 100);
  CHECK(p.field_height == 100);
  CHECK(p.scale_factor == 5);
  CHECK(p.zombie_lifetime == 120);
  CHECK(p.infection_radius == doctest::Approx(2));
  CHECK(p.infection_cooldown == 15);
  CHECK_NOTHROW(p.validate());

  p.field_width = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = RunParameters{};
  p.infection_radius = -0.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = RunParameters{};
  p.infection_cooldown = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("node id validation") {
  CHECK(is_valid_node_id("ff0a1bda-34b9-11eb-b339-0242ac130002"));
  CHECK(is_valid_node_id("FF0A1BDA-34B9-11EB-B339-0242AC130002"));
  CHECK_FALSE(is_valid_node_id("ff0a1bda-34b9-11eb-b339"));
  CHECK_FALSE(is_valid_node_id("ff0a1bda-34b9-11eb-b339-0242ac13000g"));
  CHECK_FALSE(is_valid_node_id("ff0a1bda.34b9.11eb.b339.0242ac130002"));
  CHECK_FALSE(is_valid_node_id(""));
}

TEST_CASE("step_position on a 1x1 field has no legal move") {
  RngEngine rng(1);
  CHECK(step_position({0, 0}, params_with(1, 1), rng) == Position{0, 0});
}

TEST_CASE("step_position moves one cardinal cell") {
  RngEngine rng(7);
  const std::set<std::pair<int, int>> neighbors = {{4, 5}, {6, 5}, {5, 4}, {5, 6}};
  for (int i = 0; i < 100; ++i) {
    const Position q = step_position({5, 5}, params_with(100, 100), rng);
    CHECK(neighbors.count({q.x, q.y}) == 1);
  }
}

TEST_CASE("step_position frozen draw for seed 42") {
  // One documented draw (engine() & 3 -> {+x,-x,+y,-y}, re-draw at walls)
  // from (0,0); value frozen as a regression constant.
  RngEngine rng(42);
  CHECK(step_position({0, 0}, params_with(100, 100), rng) == Position{0, 1});

  RngEngine rng2(42);
  Position p{0, 0};
  const Position expect[] = {{0, 1}, {1, 1}, {1, 2}, {1, 3}, {0, 3}, {1, 3}};
  for (const Position& e : expect) {
    p = step_position(p, params_with(100, 100), rng2);
    CHECK(p == e);
  }
}

TEST_CASE("step_position never leaves the field and never moves diagonally") {
  RngEngine rng(99);
  const RunParameters variants[] = {params_with(2, 2), params_with(1, 8), params_with(8, 1),
                                    params_with(3, 17)};
  for (const auto& params : variants) {
    Position p{0, 0};
    for (int i = 0; i < 5000; ++i) {
      const Position q = step_position(p, params, rng);
      CHECK(q.x >= 0);
      CHECK(q.x < params.field_width);
      CHECK(q.y >= 0);
      CHECK(q.y < params.field_height);
      const int manhattan = std::abs(q.x - p.x) + std::abs(q.y - p.y);
      CHECK(manhattan == 1);  // exactly one cardinal cell on fields > 1x1
      p = q;
    }
  }
}

TEST_CASE("in_infection_range is Euclidean and inclusive") {
  CHECK(in_infection_range({0, 0}, {0, 0}, 0));
  CHECK(in_infection_range({0, 0}, {1, 1}, 2));        // sqrt(2)
  CHECK_FALSE(in_infection_range({0, 0}, {2, 2}, 2));  // sqrt(8)
  CHECK(in_infection_range({0, 0}, {0, 2}, 2));        // boundary, inclusive
  CHECK_FALSE(in_infection_range({0, 0}, {3, 0}, 2));
}

TEST_CASE("in_infection_range symmetry") {
  RngEngine rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Position a{static_cast<int>(rng() % 100), static_cast<int>(rng() % 100)};
    const Position b{static_cast<int>(rng() % 100), static_cast<int>(rng() % 100)};
    const double r = static_cast<double>(rng() % 8);
    CHECK(in_infection_range(a, b, r) == in_infection_range(b, a, r));
  }
}

TEST_CASE("update_health transitions") {
  RunParameters p;  // cooldown 15

  SUBCASE("safe with in-range infected contact becomes infected now") {
    const HealthPhase next = update_health(Safe{}, secs(3), true, p);
    CHECK(next == HealthPhase{Infected{secs(3)}});
  }
  SUBCASE("infected cures into immunity after exactly the cooldown") {
    const HealthPhase next = update_health(Infected{secs(3)}, secs(18), true, p);
    CHECK(next == HealthPhase{Immune{secs(33)}});  // 18 - 3 >= 15; until 18 + 15
  }
  SUBCASE("infected stays infected before the cooldown") {
    const HealthPhase next = update_health(Infected{secs(3)}, secs(17), true, p);
    CHECK(next == HealthPhase{Infected{secs(3)}});
  }
  SUBCASE("immune contact does not reinfect") {
    const HealthPhase next = update_health(Immune{secs(33)}, secs(20), true, p);
    CHECK(next == HealthPhase{Immune{secs(33)}});
  }
  SUBCASE("immunity expires to safe") {
    CHECK(update_health(Immune{secs(33)}, secs(33), false, p) == HealthPhase{Safe{}});
    // Expiry wins over a same-instant contact; reinfection needs a later one.
    CHECK(update_health(Immune{secs(33)}, secs(40), true, p) == HealthPhase{Safe{}});
  }
  SUBCASE("safe without contact stays safe") {
    CHECK(update_health(Safe{}, secs(10), false, p) == HealthPhase{Safe{}});
  }
}

TEST_CASE("epidemic cycle under continuous contact") {
  // Safe -> Infected (exactly cooldown) -> Immune (exactly cooldown) -> Safe.
  RunParameters p;
  HealthPhase phase = Safe{};
  std::vector<int> kind_per_second;  // 0 safe, 1 infected, 2 immune
  for (std::int64_t t = 0; t <= 40; ++t) {
    phase = update_health(phase, secs(t), true, p);
    kind_per_second.push_back(static_cast<int>(phase.index()));
  }
  // t=0 infects; infected t=0..14; immune t=15..29; safe at t=30; reinfected t=31.
  for (int t = 0; t <= 14; ++t) CHECK(kind_per_second[t] == 1);
  for (int t = 15; t <= 29; ++t) CHECK(kind_per_second[t] == 2);
  CHECK(kind_per_second[30] == 0);
  CHECK(kind_per_second[31] == 1);
}

TEST_CASE("stationary iff infected") {
  CHECK_FALSE(is_stationary(Safe{}));
  CHECK(is_stationary(Infected{secs(4)}));
  CHECK_FALSE(is_stationary(Immune{secs(30)}));
}

namespace {
struct Flags {
  bool infected;
  bool alive;
};
}  // namespace

TEST_CASE("compute_stats") {
  CHECK(compute_stats(std::vector<Flags>{}) == Stats{0, 0, 0, 0});

  const std::vector<Flags> fixture = {{true, true}, {false, false}, {true, false}};
  CHECK(compute_stats(fixture) == Stats{3, 2, 2, 1});

  const std::vector<Flags> all_safe(20, Flags{false, true});
  CHECK(compute_stats(all_safe) == Stats{20, 0, 0, 0});
}

TEST_CASE("compute_stats is permutation-invariant") {
  RngEngine rng(11);
  std::vector<Flags> docs;
  for (int i = 0; i < 64; ++i) docs.push_back({(rng() & 1) != 0, (rng() & 1) != 0});
  const Stats base = compute_stats(docs);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(docs.begin(), docs.end(), rng);
    CHECK(compute_stats(docs) == base);
  }
}

TEST_CASE("timestamp text round-trip at microsecond resolution") {
  const Timestamp t = Timestamp::from_text("2020-12-02 16:19:03.123456");
  CHECK(t.to_text() == "2020-12-02 16:19:03.123456");
  CHECK(Timestamp::from_text(t.to_text()) == t);

  RngEngine rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Timestamp random{static_cast<std::int64_t>(rng() % 4'000'000'000'000'000ULL)};
    CHECK(Timestamp::from_text(random.to_text()) == random);
  }
}

TEST_CASE("timestamp rejects malformed text") {
  CHECK_FALSE(Timestamp::try_from_text("2020-12-02 16:19"));
  CHECK_FALSE(Timestamp::try_from_text("2020-12-02T16:19:03.123456"));
  CHECK_FALSE(Timestamp::try_from_text("2020-12-02 16:19:03.123"));
  CHECK_FALSE(Timestamp::try_from_text("2020-13-02 16:19:03.123456"));
  CHECK_FALSE(Timestamp::try_from_text("2020-12-02 25:19:03.123456"));
  CHECK_FALSE(Timestamp::try_from_text(""));
  CHECK(Timestamp::try_from_text("1970-01-01 00:00:00.000000").has_value());
  CHECK(Timestamp::try_from_text("1970-01-01 00:00:00.000000")->micros() == 0);
}
