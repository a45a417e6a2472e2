#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tracesim/rng.hpp"
#include "tracesim/time.hpp"

namespace tracesim {

/// The six knobs a run is parameterized by. Field dimensions are grid cells;
/// durations are seconds; scale_factor only affects exported frame
/// coordinates.
struct RunParameters {
  int field_width = 100;
  int field_height = 100;
  int scale_factor = 5;
  int zombie_lifetime = 120;   // total lifetime of every node, phase-independent
  double infection_radius = 2;
  int infection_cooldown = 15;  // stationary-while-infected and immunity window

  void validate() const;  // throws std::invalid_argument on a bad knob

  bool operator==(const RunParameters&) const = default;
};

/// Canonical 36-character hyphenated UUID string. Unique per agent, stable
/// for the agent's lifetime.
using NodeId = std::string;

bool is_valid_node_id(std::string_view id);

struct Position {
  int x = 0;
  int y = 0;

  bool operator==(const Position&) const = default;
};

// Health state machine. Transitions only run Safe -> Infected -> Immune ->
// Safe; an infected node never recovers straight to Safe. Times are
// run-relative.
struct Safe {
  bool operator==(const Safe&) const = default;
};
struct Infected {
  SimMicros infected_at = 0;
  bool operator==(const Infected&) const = default;
};
struct Immune {
  SimMicros immune_until = 0;
  bool operator==(const Immune&) const = default;
};
using HealthPhase = std::variant<Safe, Infected, Immune>;

struct BroadcastMessage {
  NodeId uuid;
  Position position;
  bool infected = false;
  Timestamp timestamp;
  bool alive = true;

  bool operator==(const BroadcastMessage&) const = default;
};

/// One deduplicated per-tick sighting of a peer.
struct ContactRecord {
  NodeId uuid;
  Timestamp timestamp;

  bool operator==(const ContactRecord&) const = default;
};

/// Broadcast fields plus the contacts accumulated since the last successful
/// publish, oldest first.
struct ReportMessage : BroadcastMessage {
  std::vector<ContactRecord> contacts;

  bool operator==(const ReportMessage&) const = default;
};

struct Stats {
  std::int64_t total_nodes = 0;
  std::int64_t zombies = 0;      // infected, alive or not
  std::int64_t deaths = 0;
  std::int64_t dead_zombies = 0;  // died while infected

  bool operator==(const Stats&) const = default;
};

/// One-cell cardinal step, re-drawing the direction while it would leave the
/// field. A 1x1 field has no legal move and returns `p` unchanged.
Position step_position(Position p, const RunParameters& params, RngEngine& rng);

/// Euclidean distance at most `radius`, inclusive.
bool in_infection_range(Position a, Position b, double radius);

/// Single-step health transition at time `now`:
///   Safe + in-range infected contact        -> Infected(now)
///   Infected(t), now - t >= cooldown        -> Immune(now + cooldown)
///   Immune(u), now >= u                     -> Safe
///   anything else (incl. Immune + contact)  -> unchanged
HealthPhase update_health(const HealthPhase& phase, SimMicros now,
                          bool infected_contact_in_range, const RunParameters& params);

/// Infected nodes stay in place; everything else moves.
bool is_stationary(const HealthPhase& phase);

/// Counts over a collection of latest per-node documents (anything exposing
/// `infected` and `alive`). At most one entry per node is assumed.
template <typename Docs>
Stats compute_stats(const Docs& docs) {
  Stats s;
  for (const auto& d : docs) {
    ++s.total_nodes;
    if (d.infected) ++s.zombies;
    if (!d.alive) {
      ++s.deaths;
      if (d.infected) ++s.dead_zombies;
    }
  }
  return s;
}

}  // namespace tracesim
