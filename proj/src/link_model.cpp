#include "linkweave/link_model.hpp"

#include <algorithm>
#include <cmath>

#include "linkweave/errors.hpp"

namespace linkweave {

namespace {

Duration ewma(Duration prior, Duration sample, double alpha) {
  const double v = (1.0 - alpha) * static_cast<double>(prior.count()) +
                   alpha * static_cast<double>(sample.count());
  return Duration{std::llround(v)};
}

constexpr Duration kMaxLatency = 60s;

}  // namespace

double LinkCharacteristic::size_after(Duration elapsed) const {
  if (elapsed < latency) return 0.0;
  return to_seconds(elapsed - latency) * static_cast<double>(bandwidth);
}

double LinkCharacteristic::delivery_us(double bytes) const {
  return static_cast<double>(latency.count()) + bytes * 1e6 / static_cast<double>(bandwidth);
}

LinkState LinkState::fresh(LinkId id, TimePoint now, const LinkModelConfig& cfg) {
  LinkState s;
  s.link_id = id;
  s.characteristic = {cfg.initial_latency, cfg.initial_bandwidth};
  s.last_decay_at = now;
  return s;
}

LinkState decay_in_flight(LinkState state, TimePoint now) {
  if (now <= state.last_decay_at) return state;
  const double drained =
      static_cast<double>(state.characteristic.bandwidth) * to_seconds(now - state.last_decay_at);
  state.in_flight_bytes = std::max(0.0, state.in_flight_bytes - drained);
  state.last_decay_at = now;
  return state;
}

LinkState record_sent(LinkState state, std::uint64_t size, TimePoint now) {
  if (size == 0) throw ProtocolError("record_sent: zero-length packet");
  state = decay_in_flight(state, now);
  state.in_flight_bytes += static_cast<double>(size);
  return state;
}

std::optional<double> estimated_delivery(const LinkState& state, std::uint64_t size,
                                         double in_flight) {
  if (!state.schedulable()) return std::nullopt;
  return state.characteristic.delivery_us(static_cast<double>(size) + in_flight);
}

std::optional<double> estimated_delivery(const LinkState& state, std::uint64_t size) {
  return estimated_delivery(state, size, state.in_flight_bytes);
}

LinkState update_bandwidth_estimate(LinkState state, std::uint64_t drained, Duration interval,
                                    bool buffers_were_full, double alpha) {
  if (!buffers_were_full || interval <= Duration{0}) return state;
  const double sample = static_cast<double>(drained) / to_seconds(interval);
  const double updated =
      (1.0 - alpha) * static_cast<double>(state.characteristic.bandwidth) + alpha * sample;
  state.characteristic.bandwidth = std::max<std::uint64_t>(1, std::llround(updated));
  return state;
}

LinkState update_latency_estimate(LinkState state, Duration rtt_sample, Duration queue_delay,
                                  double alpha) {
  if (rtt_sample <= Duration{0}) return state;
  state.srtt = state.srtt ? ewma(*state.srtt, rtt_sample, alpha) : rtt_sample;
  const Duration path_sample = std::max(Duration{1}, rtt_sample - queue_delay);
  state.path_rtt = state.path_rtt ? ewma(*state.path_rtt, path_sample, alpha) : path_sample;
  state.characteristic.latency = std::min(kMaxLatency, *state.path_rtt / 2);
  return state;
}

Duration link_rto(const LinkState& state, Duration min_rto) {
  const Duration srtt = state.srtt.value_or(state.characteristic.latency * 2);
  return std::max(min_rto, 4 * srtt);
}

}  // namespace linkweave
