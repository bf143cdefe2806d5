#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ethos {

// Event timestamps are naive UTC seconds since the Unix epoch. De-identified
// clinical data is date-shifted, so the valid range extends far past today:
// [1900-01-01, 2300-01-01).
using TimePoint = std::int64_t;

// Durations are seconds as double; simulated clocks accumulate fractional
// representative durations.
using Seconds = double;

inline constexpr Seconds kMinute = 60.0;
inline constexpr Seconds kHour = 3600.0;
inline constexpr Seconds kDay = 86400.0;

TimePoint min_valid_time();
TimePoint max_valid_time();  // exclusive

// Parses "YYYY-MM-DD HH:MM:SS". Returns nullopt on malformed input or a
// timestamp outside the valid range.
std::optional<TimePoint> parse_timestamp(std::string_view text);

// Inverse of parse_timestamp.
std::string format_timestamp(TimePoint t);

}  // namespace ethos
