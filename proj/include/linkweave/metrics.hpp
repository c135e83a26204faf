#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "linkweave/time.hpp"
#include "linkweave/trace.hpp"

namespace linkweave::metrics {

struct RatePoint {
  std::int64_t t_us = 0;
  double bytes_per_second = 0;
};

/// At every delivered event t: bytes delivered in (t - window, t] / window.
std::vector<RatePoint> moving_average(std::span<const TraceRecord> trace, Duration window);

struct Summary {
  double goodput_Bps = 0;         ///< payload bytes / (last delivery - first send)
  double steady_goodput_Bps = 0;  ///< from 2 s after the first delivery to the last
  std::vector<double> link_goodput_Bps;
  double p50_latency_ms = 0;
  double p99_latency_ms = 0;
  double first_byte_latency_ms = 0;  ///< first delivery minus transfer start
  double retransmits = 0;
  double bytes_delivered = 0;
};

Summary summarize(std::span<const TraceRecord> trace, TimePoint transfer_start,
                  std::size_t link_count);

/// Field-wise arithmetic mean.
Summary average(std::span<const Summary> runs);

inline constexpr const char* kTraceHeader = "t_us,link_id,event,seq,size,latency_us";

void write_trace_csv(std::ostream& out, std::span<const TraceRecord> trace);
/// Delivered-byte rate under 100 ms and 1000 ms windows, one row per
/// delivery: t_us,bytes_per_s_100ms,bytes_per_s_1000ms (bytes per second).
void write_bandwidth_csv(std::ostream& out, std::span<const TraceRecord> trace);
void write_summary(std::ostream& out, const Summary& s);

}  // namespace linkweave::metrics
