#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

#include "linkweave/link_model.hpp"
#include "linkweave/scheduler.hpp"

namespace linkweave {

enum class TraceEvent : std::uint8_t { Sent, Delivered, Acked, Retransmit };

std::string_view to_string(TraceEvent e);

/// One row of trace.csv.
struct TraceRecord {
  std::int64_t t_us = 0;
  LinkId link_id = 0;
  TraceEvent event = TraceEvent::Sent;
  Seq seq = 0;
  std::uint64_t size = 0;
  std::int64_t latency_us = 0;
  bool operator==(const TraceRecord&) const = default;
};

using TraceSink = std::function<void(const TraceRecord&)>;

}  // namespace linkweave
