#pragma once

#include <chrono>
#include <cstdint>

namespace linkweave {

/// Microsecond clock shared by the simulator (virtual time) and the TCP
/// runtime (steady time since process start). Time points from the two are
/// never mixed.
struct LinkClock {
  using rep = std::int64_t;
  using period = std::micro;
  using duration = std::chrono::duration<rep, period>;
  using time_point = std::chrono::time_point<LinkClock>;
  static constexpr bool is_steady = true;
};

using Duration = std::chrono::microseconds;
using TimePoint = LinkClock::time_point;

using namespace std::chrono_literals;

constexpr TimePoint at_us(std::int64_t us) { return TimePoint{Duration{us}}; }
constexpr std::int64_t to_us(TimePoint t) { return t.time_since_epoch().count(); }
constexpr double to_seconds(Duration d) { return static_cast<double>(d.count()) / 1e6; }

inline Duration from_seconds(double s) {
  return Duration{static_cast<std::int64_t>(s * 1e6 + (s >= 0 ? 0.5 : -0.5))};
}

}  // namespace linkweave
