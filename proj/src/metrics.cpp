#include "linkweave/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>

namespace linkweave::metrics {

namespace {

double percentile(std::vector<std::int64_t> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  return static_cast<double>(v[std::clamp<std::size_t>(rank, 1, v.size()) - 1]);
}

}  // namespace

std::vector<RatePoint> moving_average(std::span<const TraceRecord> trace, Duration window) {
  std::vector<RatePoint> out;
  if (window <= Duration{0}) return out;
  std::deque<std::pair<std::int64_t, std::uint64_t>> in_window;
  std::uint64_t sum = 0;
  const double w = to_seconds(window);
  for (const auto& r : trace) {
    if (r.event != TraceEvent::Delivered) continue;
    in_window.emplace_back(r.t_us, r.size);
    sum += r.size;
    while (in_window.front().first <= r.t_us - window.count()) {
      sum -= in_window.front().second;
      in_window.pop_front();
    }
    if (!out.empty() && out.back().t_us == r.t_us) out.pop_back();
    out.push_back({r.t_us, static_cast<double>(sum) / w});
  }
  return out;
}

Summary summarize(std::span<const TraceRecord> trace, TimePoint transfer_start,
                  std::size_t link_count) {
  Summary s;
  s.link_goodput_Bps.assign(link_count, 0.0);
  std::vector<std::int64_t> latencies;
  std::vector<std::uint64_t> per_link(link_count, 0);
  std::int64_t first_send = std::numeric_limits<std::int64_t>::max();
  std::int64_t first_delivery = -1;
  std::int64_t last_delivery = -1;
  std::uint64_t delivered = 0;
  for (const auto& r : trace) {
    switch (r.event) {
      case TraceEvent::Sent:
        first_send = std::min(first_send, r.t_us);
        break;
      case TraceEvent::Retransmit:
        s.retransmits += 1;
        break;
      case TraceEvent::Delivered:
        if (first_delivery < 0) first_delivery = r.t_us;
        last_delivery = r.t_us;
        delivered += r.size;
        latencies.push_back(r.latency_us);
        if (r.link_id < link_count) per_link[r.link_id] += r.size;
        break;
      case TraceEvent::Acked:
        break;
    }
  }
  s.bytes_delivered = static_cast<double>(delivered);
  if (first_delivery < 0) return s;

  const double span = static_cast<double>(last_delivery - first_send) / 1e6;
  if (span > 0) {
    s.goodput_Bps = static_cast<double>(delivered) / span;
    for (std::size_t i = 0; i < link_count; ++i)
      s.link_goodput_Bps[i] = static_cast<double>(per_link[i]) / span;
  }
  const std::int64_t steady_from = first_delivery + 2'000'000;
  if (last_delivery > steady_from) {
    std::uint64_t steady = 0;
    for (const auto& r : trace)
      if (r.event == TraceEvent::Delivered && r.t_us > steady_from) steady += r.size;
    s.steady_goodput_Bps = static_cast<double>(steady) / (static_cast<double>(last_delivery - steady_from) / 1e6);
  }
  s.p50_latency_ms = percentile(latencies, 0.50) / 1e3;
  s.p99_latency_ms = percentile(latencies, 0.99) / 1e3;
  s.first_byte_latency_ms = static_cast<double>(first_delivery - to_us(transfer_start)) / 1e3;
  return s;
}

Summary average(std::span<const Summary> runs) {
  Summary m;
  if (runs.empty()) return m;
  const double n = static_cast<double>(runs.size());
  m.link_goodput_Bps.assign(runs.front().link_goodput_Bps.size(), 0.0);
  for (const auto& r : runs) {
    m.goodput_Bps += r.goodput_Bps / n;
    m.steady_goodput_Bps += r.steady_goodput_Bps / n;
    m.p50_latency_ms += r.p50_latency_ms / n;
    m.p99_latency_ms += r.p99_latency_ms / n;
    m.first_byte_latency_ms += r.first_byte_latency_ms / n;
    m.retransmits += r.retransmits / n;
    m.bytes_delivered += r.bytes_delivered / n;
    for (std::size_t i = 0; i < m.link_goodput_Bps.size() && i < r.link_goodput_Bps.size(); ++i)
      m.link_goodput_Bps[i] += r.link_goodput_Bps[i] / n;
  }
  return m;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRecord> trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) {
    out << r.t_us << ',' << r.link_id << ',' << to_string(r.event) << ',' << r.seq << ','
        << r.size << ',' << r.latency_us << '\n';
  }
}

void write_bandwidth_csv(std::ostream& out, std::span<const TraceRecord> trace) {
  const auto fast = moving_average(trace, 100ms);
  const auto slow = moving_average(trace, 1000ms);
  out << "t_us,bytes_per_s_100ms,bytes_per_s_1000ms\n";
  out << std::fixed << std::setprecision(1);
  for (std::size_t i = 0; i < fast.size(); ++i)
    out << fast[i].t_us << ',' << fast[i].bytes_per_second << ',' << slow[i].bytes_per_second
        << '\n';
}

void write_summary(std::ostream& out, const Summary& s) {
  out << std::fixed << std::setprecision(3);
  out << "goodput_mbps " << s.goodput_Bps * 8 / 1e6 << '\n';
  out << "steady_goodput_mbps " << s.steady_goodput_Bps * 8 / 1e6 << '\n';
  for (std::size_t i = 0; i < s.link_goodput_Bps.size(); ++i)
    out << "link" << i << "_goodput_mbps " << s.link_goodput_Bps[i] * 8 / 1e6 << '\n';
  out << "p50_latency_ms " << s.p50_latency_ms << '\n';
  out << "p99_latency_ms " << s.p99_latency_ms << '\n';
  out << "first_byte_latency_ms " << s.first_byte_latency_ms << '\n';
  out << "retransmits " << s.retransmits << '\n';
  out << "bytes_delivered " << s.bytes_delivered << '\n';
}

}  // namespace linkweave::metrics
