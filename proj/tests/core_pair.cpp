#include "core_pair.hpp"

#include <algorithm>

#include "linkweave/errors.hpp"

namespace test_support {

namespace {

using namespace linkweave;

std::uint8_t content(std::uint64_t seed, ChannelId c, int dir, std::uint64_t offset) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ull ^ (std::uint64_t{c} << 8) ^ static_cast<std::uint64_t>(dir) ^
                    (offset / 8) * 0xBF58476D1CE4E5B9ull;
  x ^= x >> 31;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 29;
  return static_cast<std::uint8_t>(x >> (8 * (offset % 8)));
}

struct Stream {
  std::uint64_t total = 0;
  std::uint64_t written = 0;
  std::uint64_t consumed = 0;  // by the receiving application
};

}  // namespace

std::string run_channel_workload(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t nlinks = 1 + rng() % 3;
  std::vector<int> lat;
  for (std::size_t i = 0; i < nlinks; ++i) lat.push_back(1 + static_cast<int>(rng() % 150));
  BundleConfig cfg;
  cfg.initial_window = static_cast<std::uint32_t>(4096 + rng() % 65536);
  CorePair pair(lat, seed, cfg, 4096 + rng() % 32768);

  const std::size_t nchan = 1 + rng() % 5;
  std::vector<ChannelId> ids;
  std::map<ChannelId, Stream> up, down;  // up: side 0 -> side 1
  std::map<ChannelId, bool> closing;
  try {
    for (std::size_t i = 0; i < nchan; ++i) {
      const ChannelId id = pair.core(0).open_channel("h:" + std::to_string(i), pair.now());
      ids.push_back(id);
      up[id].total = rng() % 400000;
      down[id].total = rng() % 400000;
    }

    auto write = [&](int side, ChannelId id, Stream& s) {
      if (s.written >= s.total) return;
      const std::size_t want = std::min<std::uint64_t>(s.total - s.written, 1 + rng() % 20000);
      std::vector<std::uint8_t> buf(want);
      for (std::size_t k = 0; k < want; ++k) buf[k] = content(seed, id, side, s.written + k);
      s.written += pair.core(side).channel_write(id, buf, pair.now());
    };

    const TimePoint deadline = at_us(600'000'000);
    while (pair.now() < deadline) {
      for (ChannelId id : ids) {
        if (!closing[id]) write(0, id, up[id]);
        if (pair.core(1).channel_open(id)) write(1, id, down[id]);
      }
      // Consume a random share of what each application has buffered.
      for (int side = 0; side < 2; ++side) {
        auto& h = pair.handler(side);
        for (auto& [id, pending] : h.unconsumed) {
          if (!pending || rng() % 3 == 0) continue;
          const std::uint64_t take = 1 + rng() % pending;
          pending -= take;
          (side == 1 ? up : down)[id].consumed += take;
          pair.core(side).channel_consumed(id, take, pair.now());
        }
      }
      // Flow control: nobody receives more than consumed plus one window.
      for (ChannelId id : ids) {
        if (pair.handler(1).received[id].size() > up[id].consumed + cfg.initial_window)
          return "channel " + std::to_string(id) + " overran the window towards side 1";
        if (pair.handler(0).received[id].size() > down[id].consumed + cfg.initial_window)
          return "channel " + std::to_string(id) + " overran the window towards side 0";
      }
      // Side 0 closes once both directions are complete.
      for (ChannelId id : ids) {
        if (closing[id]) continue;
        if (up[id].written == up[id].total && pair.handler(0).received[id].size() == down[id].total &&
            down[id].written == down[id].total) {
          closing[id] = true;
          pair.core(0).channel_close(id, pair.now());
        }
      }
      if (rng() % 200 == 0 && nlinks > 1) {
        const auto l = static_cast<LinkId>(rng() % nlinks);
        pair.set_link(l, false);
        pair.run_until(pair.now() + std::chrono::milliseconds(rng() % 500));
        pair.set_link(l, true);
      }
      pair.core(0).check_invariants();
      pair.core(1).check_invariants();

      const bool done = std::all_of(ids.begin(), ids.end(), [&](ChannelId id) {
        return closing[id] && std::count(pair.handler(1).closed.begin(), pair.handler(1).closed.end(), id);
      });
      if (done && pair.core(0).idle() && pair.core(1).idle()) break;
      pair.run_until(pair.now() + std::chrono::milliseconds(1 + rng() % 20));
    }

    for (ChannelId id : ids) {
      for (int side = 0; side < 2; ++side) {
        const auto& got = pair.handler(1 - side).received[id];
        const auto& s = side == 0 ? up[id] : down[id];
        if (got.size() != s.total)
          return "channel " + std::to_string(id) + " delivered " + std::to_string(got.size()) + " of " +
                 std::to_string(s.total) + " bytes";
        for (std::size_t k = 0; k < got.size(); ++k)
          if (got[k] != content(seed, id, side, k))
            return "channel " + std::to_string(id) + " corrupt at byte " + std::to_string(k);
      }
      if (pair.core(0).channel_open(id) || pair.core(1).channel_open(id))
        return "channel " + std::to_string(id) + " still open";
    }
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace test_support
