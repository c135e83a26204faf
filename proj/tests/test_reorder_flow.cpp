#include <algorithm>
#include <random>

#include "doctest.h"
#include "linkweave/errors.hpp"
#include "linkweave/reorder_flow.hpp"
#include "support.hpp"

using namespace linkweave;
using test_support::oracle;

namespace {

ReorderItem item(Seq s, std::size_t size = 10) {
  ReorderItem it;
  it.seq = s;
  it.payload.assign(size, static_cast<std::uint8_t>(s));
  return it;
}

std::vector<Seq> seqs(const std::vector<ReorderItem>& items) {
  std::vector<Seq> out;
  for (const auto& i : items) out.push_back(i.seq);
  return out;
}

LinkState link_bw(std::uint64_t bw) {
  LinkState l;
  l.characteristic.bandwidth = bw;
  return l;
}

}  // namespace

TEST_CASE("gaps hold later items until filled") {
  ReorderBuffer b(1 << 20);
  CHECK(seqs(b.insert(0, item(0))) == std::vector<Seq>{0});
  CHECK(b.insert(2, item(2)).empty());
  CHECK(b.holds(2));
  CHECK(seqs(b.insert(1, item(1))) == std::vector<Seq>{1, 2});
  CHECK(b.next_expected() == 3);
  CHECK(b.held_bytes() == 0);
}

TEST_CASE("duplicates are ignored") {
  ReorderBuffer b(1 << 20);
  b.insert(0, item(0));
  CHECK(b.insert(0, item(0)).empty());
  b.insert(3, item(3));
  CHECK(b.insert(3, item(3)).empty());
  CHECK(b.held_bytes() == 10);
}

TEST_CASE("holding beyond capacity is a protocol error") {
  ReorderBuffer b(25);
  b.insert(1, item(1));
  b.insert(2, item(2));
  CHECK_THROWS_AS(b.insert(3, item(3)), ProtocolError);
  // The next expected item never counts against capacity.
  CHECK(seqs(b.insert(0, item(0, 100))) == std::vector<Seq>{0, 1, 2});
}

TEST_CASE("required capacity") {
  std::vector<LinkState> one{link_bw(87500)};
  CHECK(required_capacity(1s, one) == oracle().at("capacity_rto1s_87500").get<std::uint64_t>());
  std::vector<LinkState> two{link_bw(87500), link_bw(200000)};
  CHECK(required_capacity(500ms, two) == oracle().at("capacity_rto500ms_87500_200000").get<std::uint64_t>());
  std::vector<LinkState> slow{link_bw(1000)};
  CHECK(required_capacity(200ms, slow) == oracle().at("capacity_floor").get<std::uint64_t>());
  CHECK(required_capacity(1s, {}) == kReorderCapacityFloor);
}

TEST_CASE("send window blocks at zero credit") {
  auto w = ChannelWindow::open(4);
  CHECK(consume_send_window(w, kInitialWindow) == WindowResult::Ok);
  CHECK(consume_send_window(w, 1) == WindowResult::Blocked);
  on_window_increment(w, 500);
  CHECK(consume_send_window(w, 501) == WindowResult::Blocked);
  CHECK(consume_send_window(w, 500) == WindowResult::Ok);
}

TEST_CASE("grants wait for half the initial window") {
  auto w = ChannelWindow::open(1);
  const auto small = grant_window(w, 1000);
  CHECK(small.has_value() == !oracle().at("grant_after_1000").is_null());
  auto w2 = ChannelWindow::open(1);
  const auto big = grant_window(w2, 70000);
  REQUIRE(big.has_value());
  CHECK(*big == oracle().at("grant_after_70000").get<std::uint32_t>());
  CHECK(w2.ungranted == 0);
}

TEST_CASE("receiving past the grant is a protocol error") {
  auto w = ChannelWindow::open(1, 1000);
  on_channel_data(w, 1000);
  CHECK_THROWS_AS(on_channel_data(w, 1), ProtocolError);
}

TEST_CASE("property: random arrival order releases each seq once, in order") {
  std::mt19937_64 rng(7);
  for (int run = 0; run < 200; ++run) {
    const Seq n = 1 + rng() % 300;
    std::vector<Seq> order;
    for (Seq s = 0; s < n; ++s) order.push_back(s);
    std::shuffle(order.begin(), order.end(), rng);
    // Sprinkle duplicates.
    for (int d = 0; d < 20; ++d) order.push_back(rng() % n);
    ReorderBuffer b(1 << 24);
    std::vector<Seq> out;
    for (Seq s : order) {
      for (const auto& r : b.insert(s, item(s))) out.push_back(r.seq);
      REQUIRE(b.held_bytes() == b.held_count() * 10);
    }
    REQUIRE(out.size() == n);
    for (Seq s = 0; s < n; ++s) REQUIRE(out[s] == s);
  }
}

TEST_CASE("property: window conservation") {
  // sent - received + in-transit stays zero and credit never goes negative.
  std::mt19937_64 rng(11);
  for (int run = 0; run < 100; ++run) {
    auto sender = ChannelWindow::open(9);
    auto receiver = ChannelWindow::open(9);
    std::uint64_t in_transit = 0, buffered = 0;
    for (int step = 0; step < 2000; ++step) {
      switch (rng() % 3) {
        case 0: {
          const std::size_t size = 1 + rng() % 20000;
          if (consume_send_window(sender, size) == WindowResult::Ok) {
            on_channel_data(receiver, size);
            in_transit += size;
          }
          break;
        }
        case 1:
          buffered += in_transit;
          in_transit = 0;
          break;
        case 2: {
          const std::uint64_t take = buffered ? rng() % (buffered + 1) : 0;
          buffered -= take;
          if (auto inc = grant_window(receiver, take)) on_window_increment(sender, *inc);
          break;
        }
      }
      REQUIRE(sender.send_window + in_transit + buffered + receiver.ungranted == kInitialWindow);
      REQUIRE(receiver.recv_window == sender.send_window);
    }
  }
}
