#include "linkweave/reorder_flow.hpp"

#include <algorithm>
#include <cmath>

#include "linkweave/errors.hpp"

namespace linkweave {

std::vector<ReorderItem> ReorderBuffer::insert(Seq seq, ReorderItem item) {
  std::vector<ReorderItem> released;
  if (seq < next_expected_ || held_.contains(seq)) return released;
  if (seq != next_expected_) {
    const std::uint64_t size = item.payload.size();
    if (held_bytes_ + size > capacity_bytes_)
      throw ProtocolError("reorder buffer overflow: " + std::to_string(held_bytes_ + size) +
                          " > " + std::to_string(capacity_bytes_));
    held_bytes_ += size;
    held_.emplace(seq, std::move(item));
    return released;
  }
  released.push_back(std::move(item));
  ++next_expected_;
  for (auto it = held_.begin(); it != held_.end() && it->first == next_expected_;) {
    held_bytes_ -= it->second.payload.size();
    released.push_back(std::move(it->second));
    it = held_.erase(it);
    ++next_expected_;
  }
  return released;
}

std::uint64_t required_capacity(Duration rto, std::span<const LinkState> links) {
  std::uint64_t fastest = 0;
  for (const auto& l : links) fastest = std::max(fastest, l.characteristic.bandwidth);
  const double bound = to_seconds(rto) * static_cast<double>(fastest) * kReorderSafetyFactor;
  return std::max<std::uint64_t>(kReorderCapacityFloor, static_cast<std::uint64_t>(std::llround(bound)));
}

WindowResult consume_send_window(ChannelWindow& win, std::size_t size) {
  if (size > win.send_window) return WindowResult::Blocked;
  win.send_window -= size;
  return WindowResult::Ok;
}

std::optional<std::uint32_t> grant_window(ChannelWindow& win, std::uint64_t consumed) {
  win.ungranted += consumed;
  if (win.ungranted < win.initial_window / 2) return std::nullopt;
  const auto inc = static_cast<std::uint32_t>(std::min<std::uint64_t>(win.ungranted, UINT32_MAX));
  win.ungranted -= inc;
  win.recv_window += inc;
  return inc;
}

void on_window_increment(ChannelWindow& win, std::uint32_t increment) {
  win.send_window += increment;
}

void on_channel_data(ChannelWindow& win, std::size_t size) {
  if (size > win.recv_window) throw ProtocolError("peer exceeded channel window");
  win.recv_window -= size;
}

}  // namespace linkweave
