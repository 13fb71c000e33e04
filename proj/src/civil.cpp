#include "sar/civil.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>

namespace sar {

namespace {

bool read_int(std::string_view s, size_t pos, size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (size_t i = pos; i < pos + len; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

bool valid_date(int y, int m, int d) {
  if (m < 1 || m > 12 || d < 1) return false;
  static const std::array<int, 12> dim = {31, 28, 31, 30, 31, 30,
                                          31, 31, 30, 31, 30, 31};
  int max_d = dim[m - 1];
  bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  if (m == 2 && leap) max_d = 29;
  return d <= max_d;
}

}  // namespace

std::optional<CivilDateTime> parse_iso8601(std::string_view s) {
  CivilDateTime t;
  if (!read_int(s, 0, 4, t.year) || s.size() < 10) return std::nullopt;
  if (s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!read_int(s, 5, 2, t.month) || !read_int(s, 8, 2, t.day)) return std::nullopt;
  if (!valid_date(t.year, t.month, t.day)) return std::nullopt;
  size_t pos = 10;
  if (pos == s.size()) return t;  // date only
  if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
  ++pos;
  if (!read_int(s, pos, 2, t.hour)) return std::nullopt;
  if (pos + 2 >= s.size() || s[pos + 2] != ':') return std::nullopt;
  if (!read_int(s, pos + 3, 2, t.minute)) return std::nullopt;
  pos += 5;
  if (pos < s.size() && s[pos] == ':') {
    if (!read_int(s, pos + 1, 2, t.second)) return std::nullopt;
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      size_t start = pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      if (pos == start) return std::nullopt;
    }
  }
  if (t.hour > 23 || t.minute > 59 || t.second > 60) return std::nullopt;
  if (pos == s.size()) return t;
  auto off = parse_offset(s.substr(pos));
  if (!off) return std::nullopt;
  t.has_offset = true;
  t.offset_minutes = *off;
  return t;
}

std::optional<int> parse_offset(std::string_view s) {
  if (s == "Z" || s == "z") return 0;
  if (s.size() < 3 || (s[0] != '+' && s[0] != '-')) return std::nullopt;
  int sign = s[0] == '-' ? -1 : 1;
  int hh = 0, mm = 0;
  if (!read_int(s, 1, 2, hh)) return std::nullopt;
  if (s.size() == 3) {
    // ±hh
  } else if (s.size() == 5) {
    if (!read_int(s, 3, 2, mm)) return std::nullopt;
  } else if (s.size() == 6 && s[3] == ':') {
    if (!read_int(s, 4, 2, mm)) return std::nullopt;
  } else {
    return std::nullopt;
  }
  if (hh > 18 || mm > 59) return std::nullopt;
  return sign * (hh * 60 + mm);
}

std::string format_offset(int offset_minutes) {
  char buf[16];
  int a = std::abs(offset_minutes);
  std::snprintf(buf, sizeof(buf), "%c%02d:%02d", offset_minutes < 0 ? '-' : '+',
                a / 60, a % 60);
  return buf;
}

// Howard Hinnant's days-from-civil algorithm.
long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, int& y, int& m, int& d) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long yy = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

int iso_weekday(long days) {
  // 1970-01-01 was a Thursday (ISO 4).
  long w = (days + 3) % 7;
  if (w < 0) w += 7;
  return static_cast<int>(w) + 1;
}

IsoWeek iso_week(int year, int month, int day) {
  long z = days_from_civil(year, month, day);
  // Thursday of this ISO week determines the ISO year.
  long thursday = z - (iso_weekday(z) - 1) + 3;
  int ty, tm, td;
  civil_from_days(thursday, ty, tm, td);
  long jan1 = days_from_civil(ty, 1, 1);
  int week = static_cast<int>((thursday - jan1) / 7) + 1;
  return {ty, week};
}

std::string format_date(int year, int month, int day) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

std::optional<long> parse_date(std::string_view s) {
  if (s.size() != 10) return std::nullopt;
  auto t = parse_iso8601(s);
  if (!t) return std::nullopt;
  return days_from_civil(t->year, t->month, t->day);
}

std::string format_clock(int minutes_of_day) {
  int m = minutes_of_day % 1440;
  if (m < 0) m += 1440;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", m / 60, m % 60);
  return buf;
}

std::string format_timestamp(long days, int minutes_of_day, int offset_minutes) {
  days += minutes_of_day / 1440;
  minutes_of_day %= 1440;
  if (minutes_of_day < 0) {
    minutes_of_day += 1440;
    --days;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:00%s", y, m, d,
                minutes_of_day / 60, minutes_of_day % 60,
                format_offset(offset_minutes).c_str());
  return buf;
}

}  // namespace sar
