#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace rtcausal {

using Date = std::chrono::sys_days;

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD).
std::optional<Date> parse_date(std::string_view text);

std::string format_date(Date date);

inline int days_between(Date from, Date to) { return static_cast<int>((to - from).count()); }

}  // namespace rtcausal
