#include <cmath>
#include <random>

#include "doctest.h"
#include "linkweave/errors.hpp"
#include "linkweave/link_model.hpp"
#include "support.hpp"

using namespace linkweave;
using test_support::ref;

namespace {

LinkState link(Duration latency, std::uint64_t bw, double in_flight = 0, TimePoint at = {}) {
  LinkState s = LinkState::fresh(0, at);
  s.characteristic = {latency, bw};
  s.in_flight_bytes = in_flight;
  return s;
}

}  // namespace

TEST_CASE("decay drains in-flight bytes at the estimated bandwidth") {
  auto s = decay_in_flight(link(100ms, 100000, 50000), at_us(200000));
  CHECK(s.in_flight_bytes == doctest::Approx(ref("decay_50000_bw100000_200ms")));
  CHECK(s.last_decay_at == at_us(200000));

  s = decay_in_flight(link(100ms, 100000, 1000), at_us(1000000));
  CHECK(s.in_flight_bytes == ref("decay_1000_bw100000_1s"));

  s = decay_in_flight(link(100ms, 100000, 1234.5), TimePoint{});
  CHECK(s.in_flight_bytes == 1234.5);
}

TEST_CASE("record_sent adds on top of the decayed value") {
  auto s = record_sent(link(100ms, 100000), 1400, TimePoint{});
  CHECK(s.in_flight_bytes == 1400);

  s = record_sent(link(100ms, 100000, 50000), 10000, at_us(200000));
  CHECK(s.in_flight_bytes == doctest::Approx(ref("record_after_decay")));

  s = record_sent(record_sent(link(100ms, 100000), 700, TimePoint{}), 700, TimePoint{});
  CHECK(s.in_flight_bytes == 1400);

  CHECK_THROWS_AS(record_sent(link(100ms, 100000), 0, TimePoint{}), ProtocolError);
}

TEST_CASE("estimated delivery is latency plus queued bytes over bandwidth") {
  auto d = estimated_delivery(link(400ms, 87500), 1400);
  REQUIRE(d);
  CHECK(*d / 1000 == doctest::Approx(ref("delivery_400ms_87500_1400_ms")));

  d = estimated_delivery(link(400ms, 87500), 0);
  REQUIRE(d);
  CHECK(*d == 400000.0);

  d = estimated_delivery(link(100ms, 100000, 20000), 10000);
  REQUIRE(d);
  CHECK(*d / 1000 == doctest::Approx(ref("delivery_100ms_100000_10000_e20000_ms")));

  auto failed = link(100ms, 100000);
  failed.status = LinkStatus::Failed;
  CHECK_FALSE(estimated_delivery(failed, 1000).has_value());
  CHECK_FALSE(estimated_delivery(link(100ms, 0), 1000).has_value());
}

TEST_CASE("bandwidth estimate only moves while buffers were full") {
  auto s = update_bandwidth_estimate(link(0ms, 1), 175000, 2s, true, 1.0);
  CHECK(s.characteristic.bandwidth == static_cast<std::uint64_t>(ref("bw_175000_over_2s_alpha1")));

  // 120000 B/s sample: 12000 bytes in 100 ms.
  s = update_bandwidth_estimate(link(0ms, 80000), 12000, 100ms, true, 0.25);
  CHECK(s.characteristic.bandwidth == static_cast<std::uint64_t>(ref("bw_80000_sample_120000_alpha_quarter")));

  const auto before = link(10ms, 80000, 5.5);
  s = update_bandwidth_estimate(before, 999999, 1s, false, 0.25);
  CHECK(s.characteristic.bandwidth == before.characteristic.bandwidth);
  CHECK(s.characteristic.latency == before.characteristic.latency);
}

TEST_CASE("latency estimate tracks half the smoothed round trip") {
  auto s = update_latency_estimate(link(100ms, 1000), 200ms);
  REQUIRE(s.srtt);
  CHECK(*s.srtt == 200ms);
  CHECK(s.characteristic.latency.count() / 1000.0 == ref("latency_first_sample_200_ms"));

  s = update_latency_estimate(s, 280ms);
  CHECK(s.srtt->count() / 1000.0 == ref("srtt_200_sample_280_ms"));

  const auto fixed = update_latency_estimate(s, *s.srtt);
  CHECK(*fixed.srtt == *s.srtt);

  // Queueing delay is excluded from latency but kept in srtt.
  auto q = update_latency_estimate(link(100ms, 1000), 600ms, 400ms);
  CHECK(*q.srtt == 600ms);
  CHECK(q.characteristic.latency == 100ms);
}

TEST_CASE("retransmission timeout has a floor and scales with srtt") {
  auto s = update_latency_estimate(link(10ms, 1000), 20ms);
  CHECK(link_rto(s) == 200ms);
  s = update_latency_estimate(link(10ms, 1000), 300ms);
  CHECK(link_rto(s) == 1200ms);
}

TEST_CASE("size_after inverts delivery time") {
  const LinkCharacteristic c{400ms, 87500};
  CHECK(c.size_after(399ms) == 0);
  CHECK(c.size_after(416ms) == doctest::Approx(1400));
  CHECK(c.delivery_us(1400) == doctest::Approx(416000));
}

TEST_CASE("property: in-flight bytes never go negative") {
  std::mt19937_64 rng(7);
  for (int run = 0; run < 200; ++run) {
    auto s = link(Duration{static_cast<std::int64_t>(rng() % 500000)}, 1 + rng() % 10000000);
    TimePoint t{};
    for (int op = 0; op < 200; ++op) {
      t += Duration{static_cast<std::int64_t>(rng() % 50000)};
      if (rng() % 2) {
        s = record_sent(s, 1 + rng() % 1200, t);
      } else if (rng() % 3 == 0) {
        s = update_bandwidth_estimate(s, rng() % 1000000, Duration{1 + static_cast<std::int64_t>(rng() % 1000000)},
                                      rng() % 2, 0.25);
      } else {
        s = decay_in_flight(s, t);
      }
      REQUIRE(s.in_flight_bytes >= 0.0);
      REQUIRE(s.last_decay_at <= t);
    }
  }
}

TEST_CASE("property: decay composes additively") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto s = link(10ms, 1 + rng() % 2000000, static_cast<double>(rng() % 5000000));
    const auto a = Duration{static_cast<std::int64_t>(rng() % 3000000)};
    const auto b = Duration{static_cast<std::int64_t>(rng() % 3000000)};
    const auto twice = decay_in_flight(decay_in_flight(s, TimePoint{} + a), TimePoint{} + a + b);
    const auto once = decay_in_flight(s, TimePoint{} + a + b);
    REQUIRE(twice.in_flight_bytes == doctest::Approx(once.in_flight_bytes).epsilon(1e-9));
  }
}

TEST_CASE("property: delivery estimate is monotone and inverts the characteristic") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const auto s = link(Duration{static_cast<std::int64_t>(rng() % 1000000)}, 10000 + rng() % 10000000,
                        static_cast<double>(rng() % 1000000));
    const std::uint64_t size = rng() % 100000;
    const double d = *estimated_delivery(s, size);
    REQUIRE(*estimated_delivery(s, size + 1) >= d);
    REQUIRE(*estimated_delivery(s, size, s.in_flight_bytes + 1) >= d);
    const double recovered = s.characteristic.size_after(Duration{static_cast<std::int64_t>(std::llround(d))});
    // Rounding to whole microseconds moves the result by at most 1 us of data.
    const double one_us = static_cast<double>(s.characteristic.bandwidth) * 1e-6;
    REQUIRE(std::abs(recovered - (static_cast<double>(size) + s.in_flight_bytes)) <= one_us + 1e-6);
  }
}
