#pragma once

#include <cstdint>
#include <optional>

#include "linkweave/time.hpp"

namespace linkweave {

using LinkId = std::uint16_t;

/// Simple characteristic function: nothing arrives before `latency`, then
/// bytes arrive at a constant `bandwidth` (bytes per second).
struct LinkCharacteristic {
  Duration latency{0};
  std::uint64_t bandwidth = 0;

  /// Cumulative bytes delivered `elapsed` after a continuous send starts.
  double size_after(Duration elapsed) const;
  /// Inverse of size_after: time until `bytes` have been delivered.
  double delivery_us(double bytes) const;
};

enum class LinkStatus : std::uint8_t { Ready, Busy, Failed };

struct LinkModelConfig {
  Duration initial_latency = 100ms;
  std::uint64_t initial_bandwidth = 125000;
  double bandwidth_alpha = 0.25;
  double rtt_alpha = 1.0 / 8.0;
};

/// Bytes drained from a saturated send buffer since `window_start`.
struct DrainWindow {
  std::uint64_t bytes_drained = 0;
  std::optional<TimePoint> window_start;
};

/// Per-link estimator state. `in_flight_bytes` is E_T: grows on send and
/// decays at the estimated bandwidth on every access.
struct LinkState {
  LinkId link_id = 0;
  LinkCharacteristic characteristic;
  double in_flight_bytes = 0.0;
  TimePoint last_decay_at{};
  LinkStatus status = LinkStatus::Ready;
  /// Smoothed raw round trip (includes sender-side queueing). Drives the RTO.
  std::optional<Duration> srtt;
  /// Smoothed round trip with sender-side queueing removed. Drives latency.
  std::optional<Duration> path_rtt;
  DrainWindow drain_window;
  std::uint32_t consecutive_timeouts = 0;

  static LinkState fresh(LinkId id, TimePoint now, const LinkModelConfig& cfg = {});

  bool schedulable() const {
    return status != LinkStatus::Failed && characteristic.bandwidth > 0;
  }
};

LinkState decay_in_flight(LinkState state, TimePoint now);

/// Throws ProtocolError on size == 0.
LinkState record_sent(LinkState state, std::uint64_t size, TimePoint now);

/// Estimated delivery delay in microseconds for `size` more bytes given the
/// bytes already in flight. Empty for an unschedulable link.
std::optional<double> estimated_delivery(const LinkState& state, std::uint64_t size);

/// Same estimate with an explicit in-flight value (the scheduler's scratch E').
std::optional<double> estimated_delivery(const LinkState& state, std::uint64_t size,
                                         double in_flight);

LinkState update_bandwidth_estimate(LinkState state, std::uint64_t drained, Duration interval,
                                    bool buffers_were_full, double alpha = 0.25);

/// `queue_delay` is the sender's estimate of time the sample spent queued
/// behind earlier bytes on this link; it is removed before the latency
/// estimate is derived, but not from srtt.
LinkState update_latency_estimate(LinkState state, Duration rtt_sample,
                                  Duration queue_delay = Duration{0}, double alpha = 1.0 / 8.0);

/// Retransmission timeout for a link: max(min_rto, 4 * srtt).
Duration link_rto(const LinkState& state, Duration min_rto = 200ms);

}  // namespace linkweave
