#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "linkweave/bundle.hpp"
#include "linkweave/link_model.hpp"
#include "linkweave/metrics.hpp"
#include "linkweave/time.hpp"
#include "linkweave/trace.hpp"

namespace linkweave::sim {

inline constexpr std::uint64_t kDefaultSendBuffer = 65536;

/// One piece of a link's piecewise-constant characteristic.
struct Segment {
  TimePoint start{};
  Duration latency{0};
  std::uint64_t bandwidth = 0;
  bool up = true;
};

struct SimLinkSpec {
  LinkId link_id = 0;
  std::vector<Segment> segments;  ///< sorted by start, first at 0
  std::uint64_t send_buffer_bytes = kDefaultSendBuffer;
  Duration jitter{0};             ///< extra per-frame delay drawn from [0, jitter]

  const Segment& segment_at(TimePoint t) const;
};

struct SendDirective {
  std::uint64_t bytes = 0;
  TimePoint from{};
};

struct Scenario {
  std::vector<SimLinkSpec> links;
  std::vector<SendDirective> sends;
  Duration duration = 20s;
  std::uint64_t seed = 1;
  std::optional<std::uint32_t> window;
  std::optional<std::size_t> queue;
};

/// Parses the line-oriented scenario format. Throws ParseError with the
/// offending line number.
Scenario parse_scenario(std::istream& in);
Scenario parse_scenario_file(const std::string& path);
Scenario parse_scenario_text(const std::string& text);

/// Arrival of one frame written to an otherwise idle link at `sent_at`, or
/// nullopt if the link is down when the frame completes. Pure function of
/// the link description, used as the reference for the pipe model.
std::optional<TimePoint> idle_arrival(const SimLinkSpec& link, std::uint64_t frame_bytes,
                                      TimePoint sent_at);

/// Time at which `bytes` finish serializing when transmission starts at
/// `start`, integrating bandwidth across segments. nullopt if it never ends.
std::optional<TimePoint> serialization_end(const SimLinkSpec& link, std::uint64_t bytes,
                                           TimePoint start);

struct RunOptions {
  SchedulerKind scheduler = SchedulerKind::Edpf;
  std::optional<std::uint64_t> seed;  ///< overrides the scenario seed
  bool check_invariants = true;
  /// Keep running after `duration` until the transfer completes, up to this
  /// bound.
  std::optional<Duration> drain_limit;
};

struct LinkCounters {
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t in_flight = 0;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  metrics::Summary summary;
  std::uint64_t seed = 0;
  TimePoint end_time{};
  bool complete = false;        ///< every written byte delivered
  bool stream_intact = false;   ///< delivered bytes equal the written stream
  std::uint64_t app_bytes_written = 0;
  std::uint64_t app_bytes_received = 0;
  std::uint64_t max_held_bytes = 0;
  /// Events at which the receiver held more than required_capacity() of the
  /// sender's current RTO and link estimates.
  std::uint64_t reorder_bound_violations = 0;
  std::vector<LinkCounters> link_counters;
  std::optional<std::string> invariant_failure;
};

/// Runs the scenario with a client and a server bundle core: the client
/// opens one channel and writes the scripted bytes; the server consumes them.
RunResult run(const Scenario& scenario, const RunOptions& options = {});

}  // namespace linkweave::sim
