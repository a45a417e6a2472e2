#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "tracesim/model.hpp"

namespace tracesim {

/// Rejection of a malformed wire payload; `field()` names the offending field
/// (e.g. "uuid", "contacts[3].timestamp").
class WireError : public std::runtime_error {
 public:
  WireError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Canonical encoding: a single JSON object, keys in exactly the order
//   uuid, position, infected, timestamp, alive [, contacts]
// with position a two-element integer array, lowercase booleans and no
// insignificant whitespace. Decoding accepts any key order and whitespace.
std::string encode_broadcast(const BroadcastMessage& m);
std::string encode_report(const ReportMessage& r);

BroadcastMessage decode_broadcast(std::string_view bytes);  // throws WireError
ReportMessage decode_report(std::string_view bytes);        // throws WireError

// json-level helpers shared by the store and API wire formats.
nlohmann::ordered_json broadcast_fields_to_json(const BroadcastMessage& m);
nlohmann::ordered_json contacts_to_json(const std::vector<ContactRecord>& contacts);
BroadcastMessage broadcast_fields_from_json(const nlohmann::json& j);
std::vector<ContactRecord> contacts_from_json(const nlohmann::json& j,
                                              const std::string& field);
nlohmann::ordered_json stats_to_json(const Stats& stats);
Stats stats_from_json(const nlohmann::json& j);  // throws WireError

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws std::invalid_argument

}  // namespace tracesim
