#include "tracesim/model.hpp"

#include <stdexcept>

namespace tracesim {

void RunParameters::validate() const {
  if (field_width < 1) throw std::invalid_argument("field_width must be >= 1");
  if (field_height < 1) throw std::invalid_argument("field_height must be >= 1");
  if (scale_factor < 1) throw std::invalid_argument("scale_factor must be >= 1");
  if (zombie_lifetime < 1) throw std::invalid_argument("zombie_lifetime must be >= 1");
  if (infection_cooldown < 1) throw std::invalid_argument("infection_cooldown must be >= 1");
  if (infection_radius < 0) throw std::invalid_argument("infection_radius must be >= 0");
}

bool is_valid_node_id(std::string_view id) {
  if (id.size() != 36) return false;
  for (size_t i = 0; i < id.size(); ++i) {
    const char c = id[i];
    if (i == 8 || i == 13 || i == 18 || i == 23) {
      if (c != '-') return false;
    } else if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F'))) {
      return false;
    }
  }
  return true;
}

Position step_position(Position p, const RunParameters& params, RngEngine& rng) {
  // Draw procedure: engine() & 3 selects from {+x, -x, +y, -y}; re-draw while
  // the step would leave the field. 2^64 is divisible by 4, so the selection
  // is exactly uniform.
  static constexpr int dx[4] = {1, -1, 0, 0};
  static constexpr int dy[4] = {0, 0, 1, -1};

  if (params.field_width == 1 && params.field_height == 1) return p;

  for (;;) {
    const auto dir = static_cast<int>(rng() & 3);
    const Position next{p.x + dx[dir], p.y + dy[dir]};
    if (next.x >= 0 && next.x < params.field_width && next.y >= 0 &&
        next.y < params.field_height) {
      return next;
    }
  }
}

bool in_infection_range(Position a, Position b, double radius) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy <= radius * radius;
}

HealthPhase update_health(const HealthPhase& phase, SimMicros now,
                          bool infected_contact_in_range, const RunParameters& params) {
  const SimMicros cooldown =
      static_cast<SimMicros>(params.infection_cooldown) * kMicrosPerSecond;

  if (const auto* infected = std::get_if<Infected>(&phase)) {
    if (now - infected->infected_at >= cooldown) return Immune{now + cooldown};
    return phase;
  }
  if (const auto* immune = std::get_if<Immune>(&phase)) {
    if (now >= immune->immune_until) return Safe{};
    return phase;
  }
  if (infected_contact_in_range) return Infected{now};
  return phase;
}

bool is_stationary(const HealthPhase& phase) {
  return std::holds_alternative<Infected>(phase);
}

}  // namespace tracesim
