#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "linkweave/link_model.hpp"
#include "linkweave/scheduler.hpp"
#include "linkweave/time.hpp"

namespace linkweave {

inline constexpr std::uint32_t kInitialWindow = 131072;
inline constexpr std::uint64_t kReorderCapacityFloor = 64 * 1024;
inline constexpr double kReorderSafetyFactor = 2.0;

struct ReorderItem {
  ChannelId channel = 0;
  std::vector<std::uint8_t> payload;
  Seq seq = 0;
  LinkId link = 0;
  std::uint64_t sent_at_us = 0;
};

/// Turns reliable-unordered delivery back into stream order.
class ReorderBuffer {
 public:
  explicit ReorderBuffer(std::uint64_t capacity_bytes) : capacity_bytes_(capacity_bytes) {}

  /// Releases `seq` and any contiguous successors once `seq` is the next
  /// expected. Seqs already released are ignored. Throws ProtocolError when
  /// holding the item would exceed the capacity.
  std::vector<ReorderItem> insert(Seq seq, ReorderItem item);

  Seq next_expected() const { return next_expected_; }
  std::uint64_t held_bytes() const { return held_bytes_; }
  std::uint64_t capacity_bytes() const { return capacity_bytes_; }
  void set_capacity(std::uint64_t bytes) { capacity_bytes_ = bytes; }
  std::size_t held_count() const { return held_.size(); }
  bool holds(Seq s) const { return held_.contains(s); }

 private:
  Seq next_expected_ = 0;
  std::map<Seq, ReorderItem> held_;
  std::uint64_t held_bytes_ = 0;
  std::uint64_t capacity_bytes_;
};

/// Reorder capacity needed to ride out one retransmission timeout at the
/// fastest link's rate, with a safety factor and a floor.
std::uint64_t required_capacity(Duration rto, std::span<const LinkState> links);

enum class WindowResult { Ok, Blocked };

/// Per-channel credit in both directions.
struct ChannelWindow {
  ChannelId channel_id = 0;
  /// Bytes the peer still lets us send.
  std::uint64_t send_window = kInitialWindow;
  /// Bytes we have granted and not yet seen arrive.
  std::uint64_t recv_window = kInitialWindow;
  std::uint32_t initial_window = kInitialWindow;
  /// Consumed by the local application, not yet returned to the peer.
  std::uint64_t ungranted = 0;

  static ChannelWindow open(ChannelId id, std::uint32_t initial = kInitialWindow) {
    return {id, initial, initial, initial, 0};
  }
};

WindowResult consume_send_window(ChannelWindow& win, std::size_t size);

/// Accounts `consumed` delivered bytes; returns the WINDOW increment to send
/// once at least half the initial window is owed.
std::optional<std::uint32_t> grant_window(ChannelWindow& win, std::uint64_t consumed);

/// Peer granted more credit.
void on_window_increment(ChannelWindow& win, std::uint32_t increment);

/// Peer sent `size` bytes against our grant. Throws ProtocolError if the peer
/// overran the window.
void on_channel_data(ChannelWindow& win, std::size_t size);

}  // namespace linkweave
