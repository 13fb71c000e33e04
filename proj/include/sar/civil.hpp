#ifndef SAR_CIVIL_HPP
#define SAR_CIVIL_HPP

#include <optional>
#include <string>
#include <string_view>

namespace sar {

// Wall-clock date/time as written in a timestamp, plus the UTC offset it
// carried (if any). No timezone database involved: slotting works on the
// clock labels the device reported.
struct CivilDateTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
  bool has_offset = false;
  int offset_minutes = 0;
};

// Accepts YYYY-MM-DD[T ]hh:mm[:ss[.frac]][Z|±hh[:][mm]]. Fractional
// seconds are truncated. Returns nullopt on malformed input.
std::optional<CivilDateTime> parse_iso8601(std::string_view s);

// Days since 1970-01-01 for a proleptic Gregorian date.
long days_from_civil(int year, int month, int day);
void civil_from_days(long days, int& year, int& month, int& day);

// ISO weekday, 1 = Monday .. 7 = Sunday.
int iso_weekday(long days);

// ISO-8601 week (year may differ from the calendar year at boundaries).
struct IsoWeek {
  int year;
  int week;
  bool operator<(const IsoWeek& o) const {
    return year != o.year ? year < o.year : week < o.week;
  }
  bool operator==(const IsoWeek& o) const {
    return year == o.year && week == o.week;
  }
};
IsoWeek iso_week(int year, int month, int day);

std::string format_date(int year, int month, int day);
std::optional<long> parse_date(std::string_view s);  // "YYYY-MM-DD" -> days

// "hh:mm" from minutes-of-day (wrapped into [0, 1440)).
std::string format_clock(int minutes_of_day);

// ISO timestamp "YYYY-MM-DDThh:mm:ss±hh:mm" from a date (days since
// epoch), minutes into that date, and an offset label.
std::string format_timestamp(long days, int minutes_of_day, int offset_minutes);

// "+hh:mm" / "-hh:mm" / "Z" -> minutes; nullopt on malformed input.
std::optional<int> parse_offset(std::string_view s);
std::string format_offset(int offset_minutes);

}  // namespace sar

#endif
