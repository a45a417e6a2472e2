#include "tracesim/rng.hpp"

#include <array>

namespace tracesim {
namespace {

constexpr char kHex[] = "0123456789abcdef";

std::string format_uuid(std::uint64_t hi, std::uint64_t lo) {
  // 8-4-4-4-12 hex groups; version and variant nibbles fixed to the v4 layout.
  std::array<unsigned char, 16> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(hi >> (56 - 8 * i));
  for (int i = 0; i < 8; ++i) b[8 + i] = static_cast<unsigned char>(lo >> (56 - 8 * i));
  b[6] = static_cast<unsigned char>((b[6] & 0x0f) | 0x40);
  b[8] = static_cast<unsigned char>((b[8] & 0x3f) | 0x80);

  std::string out;
  out.reserve(36);
  for (int i = 0; i < 16; ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10) out.push_back('-');
    out.push_back(kHex[b[i] >> 4]);
    out.push_back(kHex[b[i] & 0x0f]);
  }
  return out;
}

}  // namespace

std::string random_uuid(RngEngine& rng) { return format_uuid(rng(), rng()); }

std::string random_uuid() {
  std::random_device rd;
  std::uint64_t hi = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  std::uint64_t lo = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  return format_uuid(hi, lo);
}

}  // namespace tracesim
