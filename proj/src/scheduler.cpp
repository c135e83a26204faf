#include "linkweave/scheduler.hpp"

#include <algorithm>
#include <queue>
#include <tuple>

#include "linkweave/errors.hpp"

namespace linkweave {

EnqueueResult WaitingQueue::enqueue(ScheduledPacket packet) {
  if (full()) return EnqueueResult::Backpressure;
  packets_.push_back(std::move(packet));
  return EnqueueResult::Queued;
}

EnqueueResult WaitingQueue::push_front(ScheduledPacket packet) {
  if (full()) return EnqueueResult::Backpressure;
  packets_.push_front(std::move(packet));
  return EnqueueResult::Queued;
}

ScheduledPacket WaitingQueue::take(std::size_t index) {
  auto it = packets_.begin() + static_cast<std::ptrdiff_t>(index);
  ScheduledPacket p = std::move(*it);
  packets_.erase(it);
  return p;
}

std::vector<std::size_t> WaitingQueue::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(packets_.size());
  for (const auto& p : packets_) out.push_back(p.payload.size());
  return out;
}

Assignment schedule_naive(std::span<const std::size_t> packet_sizes,
                          std::span<const LinkState> links) {
  Assignment result;
  std::vector<double> scratch;
  scratch.reserve(links.size());
  bool any = false;
  for (const auto& l : links) {
    scratch.push_back(l.in_flight_bytes);
    any = any || l.schedulable();
  }
  if (!any) {
    result.stalled = !packet_sizes.empty();
    return result;
  }
  result.links.reserve(packet_sizes.size());
  for (std::size_t size : packet_sizes) {
    std::optional<std::size_t> best;
    double best_t = 0.0;
    for (std::size_t i = 0; i < links.size(); ++i) {
      auto t = estimated_delivery(links[i], size, scratch[i]);
      if (!t) continue;
      if (!best || *t < best_t || (*t == best_t && links[i].link_id < links[*best].link_id)) {
        best = i;
        best_t = *t;
      }
    }
    scratch[*best] += static_cast<double>(size);
    result.links.push_back(links[*best].link_id);
  }
  return result;
}

Assignment schedule_heap(std::span<const std::size_t> packet_sizes,
                         std::span<const LinkState> links) {
  Assignment result;
  if (packet_sizes.empty()) return result;
  const std::size_t key_size = packet_sizes.front();

  using Entry = std::tuple<double, LinkId, std::size_t>;  // (delivery, id, index)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  std::vector<double> scratch(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    scratch[i] = links[i].in_flight_bytes;
    if (auto t = estimated_delivery(links[i], key_size, scratch[i]))
      heap.emplace(*t, links[i].link_id, i);
  }
  if (heap.empty()) {
    result.stalled = true;
    return result;
  }
  result.links.reserve(packet_sizes.size());
  for (std::size_t size : packet_sizes) {
    auto [t, id, i] = heap.top();
    heap.pop();
    result.links.push_back(id);
    scratch[i] += static_cast<double>(size);
    heap.emplace(*estimated_delivery(links[i], key_size, scratch[i]), id, i);
  }
  return result;
}

EnqueueResult Scheduler::enqueue(ScheduledPacket packet) {
  auto r = queue_.enqueue(std::move(packet));
  if (r == EnqueueResult::Queued) dirty_ = true;
  return r;
}

EnqueueResult Scheduler::requeue_front(ScheduledPacket packet) {
  packet.assigned_link.reset();
  auto r = queue_.push_front(std::move(packet));
  if (r == EnqueueResult::Queued) dirty_ = true;
  return r;
}

void Scheduler::refresh(std::span<LinkState> links, TimePoint now) {
  if (!dirty_ && cached_at_ == now) return;
  for (auto& l : links) l = decay_in_flight(l, now);
  if (kind_ == SchedulerKind::Edpf) {
    cached_ = schedule_heap(queue_.sizes(), links);
  } else {
    cached_ = {};
    cached_.stalled = std::none_of(links.begin(), links.end(),
                                   [](const LinkState& l) { return l.schedulable(); });
  }
  if (kind_ == SchedulerKind::Edpf && !cached_.stalled) {
    for (std::size_t i = 0; i < queue_.size(); ++i) queue_[i].assigned_link = cached_.links[i];
  }
  dirty_ = false;
  cached_at_ = now;
}

const Assignment& Scheduler::current_assignment(std::span<LinkState> links, TimePoint now) {
  refresh(links, now);
  return cached_;
}

std::optional<ScheduledPacket> Scheduler::next_packet_for(LinkId link_id,
                                                          std::span<LinkState> links,
                                                          TimePoint now) {
  if (link_id >= links.size()) throw ProtocolError("next_packet_for: unknown link");
  if (queue_.empty()) return std::nullopt;
  refresh(links, now);
  if (cached_.stalled || !links[link_id].schedulable()) return std::nullopt;

  std::optional<std::size_t> index;
  if (kind_ == SchedulerKind::RoundRobin) {
    index = 0;
  } else {
    auto it = std::find(cached_.links.begin(), cached_.links.end(), link_id);
    if (it != cached_.links.end()) index = static_cast<std::size_t>(it - cached_.links.begin());
  }
  if (!index) return std::nullopt;

  ScheduledPacket p = queue_.take(*index);
  if (kind_ == SchedulerKind::Edpf) {
    cached_.links.erase(cached_.links.begin() + static_cast<std::ptrdiff_t>(*index));
  }
  p.assigned_link = link_id;
  links[link_id] = record_sent(links[link_id], p.payload.size(), now);
  return p;
}

}  // namespace linkweave
