#include "tracesim/time.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace tracesim {
namespace {

// Civil-date conversions (proleptic Gregorian, UTC) so parsing never touches
// the process timezone.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

bool all_digits(const char* s, int n) {
  for (int i = 0; i < n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

int to_int(const char* s, int n) {
  int v = 0;
  for (int i = 0; i < n; ++i) v = v * 10 + (s[i] - '0');
  return v;
}

}  // namespace

std::optional<Timestamp> Timestamp::try_from_text(const std::string& text) {
  // Strict "YYYY-MM-DD HH:MM:SS.ffffff", 26 characters.
  if (text.size() != 26) return std::nullopt;
  const char* s = text.c_str();
  if (s[4] != '-' || s[7] != '-' || s[10] != ' ' || s[13] != ':' || s[16] != ':' ||
      s[19] != '.') {
    return std::nullopt;
  }
  if (!all_digits(s, 4) || !all_digits(s + 5, 2) || !all_digits(s + 8, 2) ||
      !all_digits(s + 11, 2) || !all_digits(s + 14, 2) || !all_digits(s + 17, 2) ||
      !all_digits(s + 20, 6)) {
    return std::nullopt;
  }
  const int year = to_int(s, 4), month = to_int(s + 5, 2), day = to_int(s + 8, 2);
  const int hour = to_int(s + 11, 2), minute = to_int(s + 14, 2), sec = to_int(s + 17, 2);
  const int micros = to_int(s + 20, 6);
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || sec > 59) {
    return std::nullopt;
  }
  const std::int64_t days = days_from_civil(year, month, day);
  const std::int64_t total =
      ((days * 24 + hour) * 60 + minute) * 60 + sec;
  return Timestamp(total * kMicrosPerSecond + micros);
}

Timestamp Timestamp::from_text(const std::string& text) {
  auto ts = try_from_text(text);
  if (!ts) throw std::invalid_argument("bad timestamp: '" + text + "'");
  return *ts;
}

std::string Timestamp::to_text() const {
  std::int64_t total_sec = micros_ / kMicrosPerSecond;
  std::int64_t frac = micros_ % kMicrosPerSecond;
  if (frac < 0) {
    frac += kMicrosPerSecond;
    total_sec -= 1;
  }
  std::int64_t days = total_sec / 86400;
  std::int64_t sod = total_sec % 86400;
  if (sod < 0) {
    sod += 86400;
    days -= 1;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d.%06d", y, m, d,
                static_cast<int>(sod / 3600), static_cast<int>(sod / 60 % 60),
                static_cast<int>(sod % 60), static_cast<int>(frac));
  return buf;
}

WallClock::WallClock() : start_(now()) {}

Timestamp WallClock::now() const {
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  return Timestamp(us);
}

SimMicros WallClock::elapsed() const { return now() - start_; }

Timestamp SimClock::default_epoch() {
  static const Timestamp epoch = Timestamp::from_text("2020-12-05 00:00:00.000000");
  return epoch;
}

}  // namespace tracesim
