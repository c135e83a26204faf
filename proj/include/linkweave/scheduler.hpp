#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "linkweave/link_model.hpp"
#include "linkweave/time.hpp"

namespace linkweave {

inline constexpr std::size_t kChunkSize = 1200;
inline constexpr std::size_t kDefaultQueueCapacity = 256;

using ChannelId = std::uint32_t;
using Seq = std::uint64_t;

struct ScheduledPacket {
  std::optional<Seq> seq;
  ChannelId channel = 0;
  std::vector<std::uint8_t> payload;
  std::optional<LinkId> assigned_link;
  TimePoint enqueued_at{};
  std::uint8_t retransmit_count = 0;
  /// Time of the first transmission; kept across retransmissions.
  std::optional<TimePoint> first_sent_at;
};

enum class EnqueueResult { Queued, Backpressure };

/// Bounded FIFO of packets waiting for a link.
class WaitingQueue {
 public:
  explicit WaitingQueue(std::size_t capacity = kDefaultQueueCapacity) : capacity_(capacity) {}

  EnqueueResult enqueue(ScheduledPacket packet);
  /// Re-inserts a timed-out packet ahead of everything else. Respects the
  /// capacity bound: returns Backpressure and leaves the queue untouched
  /// when full.
  EnqueueResult push_front(ScheduledPacket packet);

  std::size_t size() const { return packets_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return packets_.empty(); }
  bool full() const { return packets_.size() >= capacity_; }

  const ScheduledPacket& operator[](std::size_t i) const { return packets_[i]; }
  ScheduledPacket& operator[](std::size_t i) { return packets_[i]; }
  const ScheduledPacket& front() const { return packets_.front(); }

  ScheduledPacket take(std::size_t index);
  template <typename Pred>
  std::size_t remove_if(Pred pred) {
    const auto before = packets_.size();
    std::erase_if(packets_, pred);
    return before - packets_.size();
  }
  std::vector<std::size_t> sizes() const;

  auto begin() const { return packets_.begin(); }
  auto end() const { return packets_.end(); }

 private:
  std::deque<ScheduledPacket> packets_;
  std::size_t capacity_;
};

/// Link chosen for each queued packet, front to back. `stalled` is set (and
/// `links` left empty) when no link is schedulable.
struct Assignment {
  std::vector<LinkId> links;
  bool stalled = false;
};

/// Reference pass: per-packet argmin of estimated delivery over a scratch
/// copy of the in-flight counters. Ties go to the lowest link id.
Assignment schedule_naive(std::span<const std::size_t> packet_sizes,
                          std::span<const LinkState> links);

/// Heap pass. Each link is keyed by the estimated delivery of one more packet
/// of the front packet's size; identical to schedule_naive whenever all
/// queued packets have the same size.
Assignment schedule_heap(std::span<const std::size_t> packet_sizes,
                         std::span<const LinkState> links);

enum class SchedulerKind { Edpf, RoundRobin };

/// Owns the waiting queue and hands packets to links as they become ready.
class Scheduler {
 public:
  explicit Scheduler(SchedulerKind kind = SchedulerKind::Edpf,
                     std::size_t capacity = kDefaultQueueCapacity)
      : kind_(kind), queue_(capacity) {}

  SchedulerKind kind() const { return kind_; }
  WaitingQueue& queue() { return queue_; }
  const WaitingQueue& queue() const { return queue_; }

  EnqueueResult enqueue(ScheduledPacket packet);
  EnqueueResult requeue_front(ScheduledPacket packet);

  template <typename Pred>
  std::size_t remove_if(Pred pred) {
    const auto n = queue_.remove_if(pred);
    if (n > 0) dirty_ = true;
    return n;
  }

  /// Forces the next pick to rerun the scheduling pass.
  void invalidate() { dirty_ = true; }

  /// Front-most packet currently assigned to `link_id`, removed from the
  /// queue; the link's in-flight counter is charged with its size. `links`
  /// must be indexed by link id. Throws ProtocolError on an unknown link.
  std::optional<ScheduledPacket> next_packet_for(LinkId link_id, std::span<LinkState> links,
                                                 TimePoint now);

  /// The assignment the next pick will use (recomputed if stale).
  const Assignment& current_assignment(std::span<LinkState> links, TimePoint now);

 private:
  void refresh(std::span<LinkState> links, TimePoint now);

  SchedulerKind kind_;
  WaitingQueue queue_;
  Assignment cached_;
  bool dirty_ = true;
  std::optional<TimePoint> cached_at_;
};

}  // namespace linkweave
