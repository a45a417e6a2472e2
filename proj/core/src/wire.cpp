#include "tracesim/wire.hpp"

#include <array>

#include <nlohmann/json.hpp>

namespace tracesim {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// `key` is the member looked up; `label` is the path reported on rejection
// (they differ inside nested arrays, e.g. key "uuid" under "contacts[3]").
const json& require(const json& j, const std::string& key, const std::string& label) {
  if (!j.is_object()) throw WireError(label, "payload is not a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw WireError(label, "missing");
  return *it;
}

std::string get_uuid(const json& j, const std::string& key, const std::string& label) {
  const json& v = require(j, key, label);
  if (!v.is_string()) throw WireError(label, "expected string");
  auto s = v.get<std::string>();
  if (!is_valid_node_id(s)) throw WireError(label, "not a canonical 36-char uuid");
  return s;
}

Timestamp get_timestamp(const json& j, const std::string& key, const std::string& label) {
  const json& v = require(j, key, label);
  if (!v.is_string()) throw WireError(label, "expected string");
  auto ts = Timestamp::try_from_text(v.get<std::string>());
  if (!ts) throw WireError(label, "expected 'YYYY-MM-DD HH:MM:SS.ffffff'");
  return *ts;
}

bool get_bool(const json& j, const std::string& key, const std::string& label) {
  const json& v = require(j, key, label);
  if (!v.is_boolean()) throw WireError(label, "expected boolean");
  return v.get<bool>();
}

// Coordinates are grid cells; anything negative or absurdly large is a
// corrupted message, not a big field.
constexpr std::int64_t kMaxCoordinate = 1'000'000'000;

Position get_position(const json& j, const std::string& key, const std::string& label) {
  const json& v = require(j, key, label);
  if (!v.is_array() || v.size() != 2) throw WireError(label, "expected [x, y]");
  Position p;
  int* out[2] = {&p.x, &p.y};
  for (int i = 0; i < 2; ++i) {
    if (!v[i].is_number_integer()) throw WireError(label, "expected integer coordinates");
    const auto c = v[i].get<std::int64_t>();
    if (c < 0 || c > kMaxCoordinate) throw WireError(label, "coordinate out of range");
    *out[i] = static_cast<int>(c);
  }
  return p;
}

}  // namespace

nlohmann::ordered_json broadcast_fields_to_json(const BroadcastMessage& m) {
  ordered_json j;
  j["uuid"] = m.uuid;
  j["position"] = {m.position.x, m.position.y};
  j["infected"] = m.infected;
  j["timestamp"] = m.timestamp.to_text();
  j["alive"] = m.alive;
  return j;
}

nlohmann::ordered_json contacts_to_json(const std::vector<ContactRecord>& contacts) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : contacts) {
    ordered_json e;
    e["uuid"] = c.uuid;
    e["timestamp"] = c.timestamp.to_text();
    arr.push_back(std::move(e));
  }
  return arr;
}

BroadcastMessage broadcast_fields_from_json(const json& j) {
  BroadcastMessage m;
  m.uuid = get_uuid(j, "uuid", "uuid");
  m.position = get_position(j, "position", "position");
  m.infected = get_bool(j, "infected", "infected");
  m.timestamp = get_timestamp(j, "timestamp", "timestamp");
  m.alive = get_bool(j, "alive", "alive");
  return m;
}

std::vector<ContactRecord> contacts_from_json(const json& j, const std::string& field) {
  const json& v = require(j, field, field);
  if (!v.is_array()) throw WireError(field, "expected array");
  std::vector<ContactRecord> out;
  out.reserve(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const std::string prefix = field + "[" + std::to_string(i) + "]";
    const json& e = v[i];
    if (!e.is_object()) throw WireError(prefix, "expected object");
    ContactRecord c;
    c.uuid = get_uuid(e, "uuid", prefix + ".uuid");
    c.timestamp = get_timestamp(e, "timestamp", prefix + ".timestamp");
    out.push_back(std::move(c));
  }
  return out;
}

nlohmann::ordered_json stats_to_json(const Stats& stats) {
  ordered_json j;
  j["total_nodes"] = stats.total_nodes;
  j["zombies"] = stats.zombies;
  j["deaths"] = stats.deaths;
  j["dead_zombies"] = stats.dead_zombies;
  return j;
}

Stats stats_from_json(const json& j) {
  Stats s;
  struct Field {
    const char* name;
    std::int64_t* out;
  };
  const Field fields[] = {{"total_nodes", &s.total_nodes},
                          {"zombies", &s.zombies},
                          {"deaths", &s.deaths},
                          {"dead_zombies", &s.dead_zombies}};
  for (const auto& f : fields) {
    if (!j.is_object() || !j.contains(f.name) || !j[f.name].is_number_integer()) {
      throw WireError(f.name, "missing or not an integer");
    }
    *f.out = j[f.name].get<std::int64_t>();
  }
  return s;
}

std::string encode_broadcast(const BroadcastMessage& m) {
  return broadcast_fields_to_json(m).dump();
}

std::string encode_report(const ReportMessage& r) {
  ordered_json j = broadcast_fields_to_json(r);
  j["contacts"] = contacts_to_json(r.contacts);
  return j.dump();
}

namespace {

json parse_or_throw(std::string_view bytes) {
  json j = json::parse(bytes, nullptr, false);
  if (j.is_discarded()) throw WireError("payload", "malformed JSON");
  return j;
}

}  // namespace

BroadcastMessage decode_broadcast(std::string_view bytes) {
  return broadcast_fields_from_json(parse_or_throw(bytes));
}

ReportMessage decode_report(std::string_view bytes) {
  const json j = parse_or_throw(bytes);
  ReportMessage r;
  static_cast<BroadcastMessage&>(r) = broadcast_fields_from_json(j);
  r.contacts = contacts_from_json(j, "contacts");
  return r;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64[v >> 18]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back(kB64[v & 63]);
  }
  const size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64[v >> 18]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.append("==");
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64[v >> 18]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  static const auto table = [] {
    std::array<signed char, 256> t;
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kB64[i])] = static_cast<signed char>(i);
    return t;
  }();
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const signed char d = table[static_cast<unsigned char>(c)];
      if (d < 0 || pad > 0) throw std::invalid_argument("base64: bad character");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out.push_back(static_cast<char>(v >> 16));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

}  // namespace tracesim
