#include <random>
#include <sstream>

#include "doctest.h"
#include "linkweave/metrics.hpp"
#include "support.hpp"

using namespace linkweave;
using namespace linkweave::metrics;

namespace {

TraceRecord delivered(std::int64_t t, std::uint64_t size, LinkId link = 0, std::int64_t lat = 0) {
  return {t, link, TraceEvent::Delivered, 0, size, lat};
}

}  // namespace

TEST_CASE("moving average of one delivery") {
  const std::vector<TraceRecord> t{delivered(1000, 1400)};
  const auto avg = moving_average(t, 100ms);
  REQUIRE(avg.size() == 1);
  CHECK(avg[0].bytes_per_second == test_support::ref("moving_average_single_1400_100ms"));
}

TEST_CASE("moving average drops samples older than the window") {
  const std::vector<TraceRecord> t{delivered(0, 1000), delivered(50000, 1000), delivered(100000, 1000)};
  const auto avg = moving_average(t, 100ms);
  REQUIRE(avg.size() == 3);
  CHECK(avg[1].bytes_per_second == 20000.0);
  CHECK(avg[2].bytes_per_second == 20000.0);
}

TEST_CASE("summary latency percentiles and goodput") {
  std::vector<TraceRecord> t{{0, 0, TraceEvent::Sent, 0, 100, 0}};
  for (int i = 1; i <= 100; ++i) t.push_back(delivered(i * 10000, 100, static_cast<LinkId>(i % 2), i * 1000));
  t.push_back({5000, 1, TraceEvent::Retransmit, 3, 100, 0});
  const auto s = summarize(t, TimePoint{}, 2);
  CHECK(s.bytes_delivered == 10000);
  CHECK(s.goodput_Bps == doctest::Approx(10000.0));
  CHECK(s.link_goodput_Bps[0] + s.link_goodput_Bps[1] == doctest::Approx(s.goodput_Bps));
  CHECK(s.first_byte_latency_ms == 10.0);
  CHECK(s.p50_latency_ms == doctest::Approx(50.0).epsilon(0.03));
  CHECK(s.p99_latency_ms == doctest::Approx(99.0).epsilon(0.02));
  CHECK(s.retransmits == 1);
}

TEST_CASE("averaging summaries is field-wise") {
  Summary a, b;
  a.goodput_Bps = 10;
  b.goodput_Bps = 30;
  a.p99_latency_ms = 1;
  b.p99_latency_ms = 3;
  a.link_goodput_Bps = {1, 2};
  b.link_goodput_Bps = {3, 4};
  const std::vector<Summary> runs{a, b};
  const auto m = average(runs);
  CHECK(m.goodput_Bps == 20);
  CHECK(m.p99_latency_ms == 2);
  CHECK(m.link_goodput_Bps == std::vector<double>{2, 3});
}

TEST_CASE("csv writers") {
  const std::vector<TraceRecord> t{{12, 1, TraceEvent::Sent, 4, 1223, 0}, delivered(400012, 1200, 1, 400000)};
  std::ostringstream trace, bw;
  write_trace_csv(trace, t);
  CHECK(trace.str() ==
        "t_us,link_id,event,seq,size,latency_us\n12,1,sent,4,1223,0\n400012,1,delivered,0,1200,400000\n");
  write_bandwidth_csv(bw, t);
  CHECK(bw.str() == "t_us,bytes_per_s_100ms,bytes_per_s_1000ms\n400012,12000.0,1200.0\n");
}

TEST_CASE("property: moving average times the window equals bytes in the window") {
  std::mt19937_64 rng(3);
  std::vector<TraceRecord> t;
  std::int64_t now = 0;
  for (int i = 0; i < 3000; ++i) {
    now += static_cast<std::int64_t>(rng() % 20000);
    t.push_back(delivered(now, 1 + rng() % 1200));
  }
  const auto avg = moving_average(t, 1000ms);
  std::size_t k = 0;
  for (const auto& p : avg) {
    std::uint64_t sum = 0;
    for (const auto& r : t)
      if (r.t_us > p.t_us - 1000000 && r.t_us <= p.t_us) sum += r.size;
    REQUIRE(p.bytes_per_second == doctest::Approx(static_cast<double>(sum)));
    ++k;
  }
  CHECK(k > 0);
}
