#include "linkweave/reliability.hpp"

#include <algorithm>

#include "linkweave/errors.hpp"

namespace linkweave {

Seq SendTracker::assign_seq() {
  if (next_seq_ == kNoCumulative) throw ProtocolError("sequence space exhausted");
  return next_seq_++;
}

void SendTracker::on_transmit(ScheduledPacket packet, LinkId link, TimePoint sent_at,
                              Duration rto, Duration queue_delay) {
  const Seq seq = packet.seq.value();
  const bool retransmit = packet.retransmit_count > 0;
  if (auto it = unacked_.find(seq); it != unacked_.end()) {
    deadlines_.erase({it->second.rto_deadline, seq});
    unacked_.erase(it);
  }
  UnackedEntry e{std::move(packet), sent_at, link, sent_at + rto, false};
  deadlines_.emplace(e.rto_deadline, seq);
  unacked_.emplace(seq, std::move(e));
  send_log_[link].push_back({sent_at, seq, queue_delay, retransmit});
}

AckOutcome SendTracker::on_ack(Seq cumulative, std::optional<TimePoint> echo,
                               Duration hold_delay, LinkId link, TimePoint now) {
  AckOutcome out;
  if (cumulative != kNoCumulative && cumulative >= next_seq_)
    throw ProtocolError("ACK for a sequence ID that was never sent");

  if (echo) {
    auto& log = send_log_[link];
    while (!log.empty() && log.front().sent_at <= *echo) {
      const LogEntry entry = log.front();
      log.pop_front();
      if (auto it = unacked_.find(entry.seq);
          it != unacked_.end() && it->second.link == link && it->second.sent_at == entry.sent_at &&
          !it->second.link_delivered) {
        it->second.link_delivered = true;
        deadlines_.erase({it->second.rto_deadline, entry.seq});
      }
      if (entry.sent_at == *echo && !entry.retransmit) {
        const Duration rtt = (now - entry.sent_at) - hold_delay;
        if (rtt > Duration{0}) out.rtt_samples.push_back({link, rtt, entry.queue_delay});
      }
    }
  }

  if (cumulative != kNoCumulative && (!cumulative_ || cumulative > *cumulative_)) {
    cumulative_ = cumulative;
    auto end = unacked_.upper_bound(cumulative);
    for (auto it = unacked_.begin(); it != end; ++it) {
      const auto& e = it->second;
      if (!e.link_delivered) deadlines_.erase({e.rto_deadline, it->first});
      out.acked.push_back({it->first, e.packet.channel, e.link, e.packet.payload.size(),
                           e.packet.first_sent_at.value_or(e.sent_at)});
    }
    unacked_.erase(unacked_.begin(), end);
  }
  return out;
}

TimedOut SendTracker::check_retransmit(TimePoint now) {
  TimedOut out;
  while (!deadlines_.empty() && deadlines_.begin()->first <= now) {
    const Seq seq = deadlines_.begin()->second;
    deadlines_.erase(deadlines_.begin());
    auto it = unacked_.find(seq);
    if (it == unacked_.end()) continue;
    ScheduledPacket p = std::move(it->second.packet);
    const LinkId link = it->second.link;
    unacked_.erase(it);
    if (p.retransmit_count < 255) ++p.retransmit_count;
    p.assigned_link.reset();
    out.packets.push_back(std::move(p));
    if (std::find(out.links.begin(), out.links.end(), link) == out.links.end())
      out.links.push_back(link);
  }
  std::sort(out.links.begin(), out.links.end());
  std::sort(out.packets.begin(), out.packets.end(),
            [](const ScheduledPacket& a, const ScheduledPacket& b) { return *a.seq < *b.seq; });
  return out;
}

void SendTracker::expire_link(LinkId link, TimePoint now) {
  for (auto& [seq, e] : unacked_) {
    if (e.link != link || e.link_delivered || e.rto_deadline <= now) continue;
    deadlines_.erase({e.rto_deadline, seq});
    e.rto_deadline = now;
    deadlines_.emplace(now, seq);
  }
  send_log_.erase(link);
}

std::optional<TimePoint> SendTracker::next_deadline() const {
  if (deadlines_.empty()) return std::nullopt;
  return deadlines_.begin()->first;
}

bool RecvTracker::on_receive(Seq seq) {
  if (seq < next_expected_ || received_.contains(seq)) return false;
  if (seq != next_expected_) {
    received_.insert(seq);
    return true;
  }
  ++next_expected_;
  while (!received_.empty() && *received_.begin() == next_expected_) {
    received_.erase(received_.begin());
    ++next_expected_;
  }
  return true;
}

void RecvTracker::note_arrival(LinkId link, TimePoint sent_at, std::size_t bytes,
                               TimePoint now) {
  auto& e = echo_[link];
  e.sent_at = sent_at;
  e.arrived_at = now;
  e.pending = true;
  bytes_since_ack_ += bytes;
}

std::optional<TimePoint> RecvTracker::next_ack_due() const {
  bool pending = std::any_of(echo_.begin(), echo_.end(),
                             [](const auto& kv) { return kv.second.pending; });
  if (!pending) return std::nullopt;
  return last_ack_sent_at_ + kAckInterval;
}

std::vector<LinkAck> RecvTracker::maybe_emit_ack(TimePoint now) {
  std::vector<LinkAck> out;
  const bool due = now - last_ack_sent_at_ >= kAckInterval || bytes_since_ack_ >= kAckBytesThreshold;
  if (!due) return out;
  const Seq cum = next_expected_ == 0 ? kNoCumulative : next_expected_ - 1;
  for (auto& [link, e] : echo_) {
    if (!e.pending) continue;
    out.push_back({link, cum, e.sent_at, now - e.arrived_at});
    e.pending = false;
  }
  if (!out.empty()) {
    last_ack_sent_at_ = now;
    bytes_since_ack_ = 0;
  }
  return out;
}

}  // namespace linkweave
