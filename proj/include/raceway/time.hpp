#pragma once

// Timestamps are UTC seconds (std::chrono::sys_seconds). Campaign-local clock
// quantities (time of day, calendar date) are derived through a fixed UTC
// offset; the reactors run through a single season so DST is not modelled.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "raceway/errors.hpp"

namespace raceway {

using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;
using Date = std::chrono::year_month_day;

inline constexpr std::int64_t kSecondsPerDay = 86400;

/// Time of day in local seconds since midnight, [0, 86400).
struct TimeOfDay {
    std::int64_t seconds = 0;
    friend constexpr auto operator<=>(const TimeOfDay&, const TimeOfDay&) = default;
};

namespace detail {

inline int parse_int(std::string_view s, std::string_view what) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ParameterError("bad " + std::string(what) + " field '" + std::string(s) + "'");
    return v;
}

inline std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
    std::int64_t r = a % b;
    return r < 0 ? r + b : r;
}

}  // namespace detail

/// Parses "YYYY-MM-DD".
inline Date parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
        throw ParameterError("bad date '" + std::string(s) + "', expected YYYY-MM-DD");
    const Date d{std::chrono::year{detail::parse_int(s.substr(0, 4), "year")},
                 std::chrono::month{static_cast<unsigned>(detail::parse_int(s.substr(5, 2), "month"))},
                 std::chrono::day{static_cast<unsigned>(detail::parse_int(s.substr(8, 2), "day"))}};
    if (!d.ok()) throw ParameterError("invalid calendar date '" + std::string(s) + "'");
    return d;
}

inline std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

/// Parses "HH:MM" or "HH:MM:SS".
inline TimeOfDay parse_time_of_day(std::string_view s) {
    if (s.size() != 5 && s.size() != 8) throw ParameterError("bad time of day '" + std::string(s) + "'");
    const int h = detail::parse_int(s.substr(0, 2), "hour");
    const int m = detail::parse_int(s.substr(3, 2), "minute");
    const int sec = s.size() == 8 ? detail::parse_int(s.substr(6, 2), "second") : 0;
    if (s[2] != ':' || (s.size() == 8 && s[5] != ':') || h < 0 || h > 24 || m < 0 || m > 59 || sec < 0 ||
        sec > 59 || (h == 24 && (m || sec)))
        throw ParameterError("bad time of day '" + std::string(s) + "'");
    return TimeOfDay{h * 3600 + m * 60 + sec};
}

inline std::string format_time_of_day(TimeOfDay tod) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld", static_cast<long long>(tod.seconds / 3600),
                  static_cast<long long>(tod.seconds / 60 % 60), static_cast<long long>(tod.seconds % 60));
    return buf;
}

struct ParsedTimestamp {
    Timestamp t;
    Seconds utc_offset;
};

/// Parses ISO-8601 "YYYY-MM-DDTHH:MM:SS" followed by "Z" or "+HH:MM"/"-HH:MM".
/// An explicit offset is required.
inline ParsedTimestamp parse_iso8601(std::string_view s) {
    if (s.size() < 20 || (s[10] != 'T' && s[10] != ' '))
        throw ParameterError("bad timestamp '" + std::string(s) + "'");
    const Date d = parse_date(s.substr(0, 10));
    const TimeOfDay tod = parse_time_of_day(s.substr(11, 8));
    std::string_view zone = s.substr(19);
    // Fractional seconds are accepted and truncated.
    if (!zone.empty() && zone[0] == '.') {
        std::size_t i = 1;
        while (i < zone.size() && zone[i] >= '0' && zone[i] <= '9') ++i;
        zone.remove_prefix(i);
    }
    Seconds offset{0};
    if (zone == "Z") {
    } else if (zone.size() == 6 && (zone[0] == '+' || zone[0] == '-') && zone[3] == ':') {
        const int oh = detail::parse_int(zone.substr(1, 2), "offset hour");
        const int om = detail::parse_int(zone.substr(4, 2), "offset minute");
        offset = Seconds{(zone[0] == '-' ? -1 : 1) * (oh * 3600 + om * 60)};
    } else {
        throw ParameterError("timestamp '" + std::string(s) + "' lacks a timezone offset");
    }
    const Timestamp local{std::chrono::sys_days{d}.time_since_epoch() + Seconds{tod.seconds}};
    return {local - offset, offset};
}

inline std::string format_iso8601(Timestamp t, Seconds utc_offset) {
    const auto local = t + utc_offset;
    const auto day = std::chrono::floor<std::chrono::days>(local);
    const Date d{day};
    const std::int64_t sod = (local - day).count();
    const std::int64_t off = utc_offset.count();
    const std::int64_t aoff = off < 0 ? -off : off;
    char buf[40];
    if (off == 0) {
        std::snprintf(buf, sizeof buf, "%sT%sZ", format_date(d).c_str(), format_time_of_day({sod}).c_str());
    } else {
        std::snprintf(buf, sizeof buf, "%sT%s%c%02lld:%02lld", format_date(d).c_str(),
                      format_time_of_day({sod}).c_str(), off < 0 ? '-' : '+', static_cast<long long>(aoff / 3600),
                      static_cast<long long>(aoff / 60 % 60));
    }
    return buf;
}

inline TimeOfDay local_time_of_day(Timestamp t, Seconds utc_offset) {
    return TimeOfDay{detail::floor_mod((t + utc_offset).time_since_epoch().count(), kSecondsPerDay)};
}

inline Date local_date(Timestamp t, Seconds utc_offset) {
    return Date{std::chrono::floor<std::chrono::days>(t + utc_offset)};
}

/// UTC instant of a local wall-clock time on a local date.
inline Timestamp at_local(const Date& d, TimeOfDay tod, Seconds utc_offset) {
    return Timestamp{std::chrono::sys_days{d}.time_since_epoch() + Seconds{tod.seconds}} - utc_offset;
}

}  // namespace raceway
