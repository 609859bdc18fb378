#pragma once

#include <cstdint>
#include <limits>

#include "coconut/error.hpp"

namespace coconut {

/// Inclusive range of logical timestamps.
struct TimeWindow {
  std::uint64_t start_ts = 0;
  std::uint64_t end_ts = std::numeric_limits<std::uint64_t>::max();

  static TimeWindow make(std::uint64_t start, std::uint64_t end) {
    if (start > end) throw Error(ErrorCode::InvalidArgument, "window start after end");
    return {start, end};
  }

  bool contains(std::uint64_t ts) const noexcept { return start_ts <= ts && ts <= end_ts; }
  bool intersects(std::uint64_t min_ts, std::uint64_t max_ts) const noexcept {
    return min_ts <= end_ts && start_ts <= max_ts;
  }
  bool operator==(const TimeWindow&) const = default;
};

}  // namespace coconut
