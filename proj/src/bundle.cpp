#include "linkweave/bundle.hpp"

#include <algorithm>
#include <cmath>

#include "linkweave/errors.hpp"

namespace linkweave {

namespace {

constexpr Duration kMaxSuspectedLatency = 60s;

std::uint32_t clamp_u32(std::int64_t v) {
  return static_cast<std::uint32_t>(std::clamp<std::int64_t>(v, 0, UINT32_MAX));
}

}  // namespace

BundleCore::BundleCore(BundleConfig config, LinkIo& io, ChannelHandler& handler,
                       std::size_t link_count, TimePoint now)
    : config_(config),
      io_(io),
      handler_(handler),
      link_rt_(link_count),
      scheduler_(config.scheduler, config.queue_capacity),
      reorder_(config.reorder_capacity) {
  links_.reserve(link_count);
  for (std::size_t i = 0; i < link_count; ++i) {
    auto s = LinkState::fresh(static_cast<LinkId>(i), now, config_.link_model);
    s.status = LinkStatus::Failed;
    links_.push_back(s);
  }
}

// ---------------------------------------------------------------------------
// Link transport events

void BundleCore::on_link_up(LinkId link, TimePoint now, std::optional<Duration> handshake_rtt) {
  auto& rt = link_rt_.at(link);
  auto& s = links_[link];
  if (handshake_rtt && *handshake_rtt > Duration{0})
    s = update_latency_estimate(s, *handshake_rtt, Duration{0}, config_.link_model.rtt_alpha);
  if (rt.ever_up)
    s.characteristic.bandwidth = std::max<std::uint64_t>(1, s.characteristic.bandwidth / 2);
  rt.up = true;
  rt.writable = true;
  rt.ever_up = true;
  s.in_flight_bytes = 0.0;
  s.last_decay_at = std::max(s.last_decay_at, now);
  s.status = LinkStatus::Ready;
  s.consecutive_timeouts = 0;
  s.drain_window = {};
  scheduler_.invalidate();
  pump(now);
}

void BundleCore::on_link_down(LinkId link, TimePoint now) {
  auto& rt = link_rt_.at(link);
  rt.up = false;
  rt.writable = false;
  links_[link].status = LinkStatus::Failed;
  links_[link].drain_window = {};
  send_.expire_link(link, now);
  scheduler_.invalidate();
  check_timeouts(now);
  pump(now);
}

void BundleCore::on_writable(LinkId link, TimePoint now) {
  auto& rt = link_rt_.at(link);
  if (!rt.up) return;
  rt.writable = true;
  if (links_[link].status == LinkStatus::Busy) links_[link].status = LinkStatus::Ready;
  pump(now);
}

void BundleCore::on_frame(LinkId link, const Frame& frame, TimePoint now) {
  if (link >= links_.size()) throw ProtocolError("frame on unknown link");
  if (const auto* d = std::get_if<DataFrame>(&frame)) {
    handle_data(link, *d, now);
  } else if (const auto* a = std::get_if<AckFrame>(&frame)) {
    handle_ack(link, *a, now);
  } else if (std::holds_alternative<HelloFrame>(frame)) {
    throw ProtocolError("HELLO after link setup");
  } else {
    // Control frames normally travel inside the sequenced stream; accept them
    // bare as well.
    handle_control(frame, now);
  }
  pump(now);
}

void BundleCore::on_timer(TimePoint now) {
  check_timeouts(now);
  emit_acks(now);
  pump(now);
}

std::optional<TimePoint> BundleCore::next_wakeup() const {
  auto a = send_.next_deadline();
  auto b = recv_.next_ack_due();
  if (a && b) return std::min(*a, *b);
  return a ? a : b;
}

// ---------------------------------------------------------------------------
// Sending

void BundleCore::pump(TimePoint now) {
  if (pumping_) return;
  pumping_ = true;
  struct Reset {
    bool& flag;
    ~Reset() { flag = false; }
  } reset{pumping_};

  bool progress = true;
  while (progress) {
    progress = false;

    auto& q = scheduler_.queue();
    if (!backlog_.empty() && !q.full()) {
      const std::size_t n = std::min(backlog_.size(), q.capacity() - q.size());
      for (std::size_t i = n; i-- > 0;) scheduler_.requeue_front(std::move(backlog_[i]));
      backlog_.erase(backlog_.begin(), backlog_.begin() + static_cast<std::ptrdiff_t>(n));
    }

    const std::size_t m = links_.size();
    for (std::size_t k = 0; k < m; ++k) {
      if (send_one(static_cast<LinkId>((rr_cursor_ + k) % m), now)) progress = true;
    }
    if (m > 0) rr_cursor_ = (rr_cursor_ + 1) % m;

    if (!q.full() && backlog_.empty()) {
      std::vector<ChannelId> ready;
      for (auto& [id, ch] : channels_) {
        if (ch.wants_write && !ch.close_sent &&
            (ch.state == ChannelState::Open || ch.state == ChannelState::Opening) &&
            ch.window.send_window > 0) {
          ch.wants_write = false;
          ready.push_back(id);
        }
      }
      const std::size_t before = q.size();
      for (ChannelId id : ready) handler_.on_channel_writable(id);
      if (q.size() != before || !backlog_.empty()) progress = true;
    }
  }
}

bool BundleCore::send_one(LinkId link, TimePoint now) {
  const auto& rt = link_rt_[link];
  if (!rt.up || !rt.writable) return false;
  auto packet = scheduler_.next_packet_for(link, links_, now);
  if (!packet) {
    // Writable with nothing to send: the buffer is no longer saturated.
    close_drain_window(link);
    return false;
  }
  transmit(link, std::move(*packet), now);
  return true;
}

void BundleCore::transmit(LinkId link, ScheduledPacket packet, TimePoint now) {
  auto& rt = link_rt_[link];
  auto& state = links_[link];
  const std::int64_t stamp = std::max(to_us(now), rt.last_stamp_us + 1);
  rt.last_stamp_us = stamp;

  const double ahead = std::max(0.0, state.in_flight_bytes - static_cast<double>(packet.payload.size()));
  const Duration queue_delay{static_cast<std::int64_t>(
      ahead * 1e6 / static_cast<double>(std::max<std::uint64_t>(1, state.characteristic.bandwidth)))};

  scratch_.clear();
  DataFrame frame{packet.channel, *packet.seq, static_cast<std::uint64_t>(stamp), {}};
  frame.payload = packet.payload;
  encode_into(frame, scratch_);
  const WriteOutcome out = io_.write_frame(link, scratch_, false);
  if (!out.accepted) {
    rt.writable = false;
    state.status = LinkStatus::Busy;
    backlog_.push_front(std::move(packet));
    return;
  }

  const bool retransmit = packet.retransmit_count > 0;
  if (retransmit) ++stats_.retransmissions;
  ++stats_.data_packets_sent;
  if (!packet.first_sent_at) packet.first_sent_at = now;
  if (packet.channel != kControlChannel)
    record(retransmit ? TraceEvent::Retransmit : TraceEvent::Sent, link, *packet.seq,
           packet.payload.size(), 0, now);
  if (state.drain_window.window_start) state.drain_window.bytes_drained += scratch_.size();

  const Duration rto = link_rto(state, kMinRto);
  send_.on_transmit(std::move(packet), link, at_us(stamp), rto, queue_delay);
  if (out.now_full) note_full(link, now);
}

void BundleCore::note_full(LinkId link, TimePoint now) {
  auto& rt = link_rt_[link];
  auto& state = links_[link];
  rt.writable = false;
  if (state.status == LinkStatus::Ready) state.status = LinkStatus::Busy;
  auto& w = state.drain_window;
  if (!w.window_start) {
    w = {0, now};
    return;
  }
  const Duration interval = now - *w.window_start;
  if (interval >= kBandwidthSamplePeriod) {
    const auto before = state.characteristic.bandwidth;
    state = update_bandwidth_estimate(state, w.bytes_drained, interval, true,
                                      config_.link_model.bandwidth_alpha);
    if (state.characteristic.bandwidth != before) scheduler_.invalidate();
    state.drain_window = {0, now};
  }
}

void BundleCore::close_drain_window(LinkId link) { links_[link].drain_window = {}; }

// ---------------------------------------------------------------------------
// Receiving

void BundleCore::handle_data(LinkId link, const DataFrame& f, TimePoint now) {
  recv_.note_arrival(link, at_us(static_cast<std::int64_t>(f.sent_at_us)), f.payload.size(), now);
  if (recv_.on_receive(f.seq)) {
    auto released =
        reorder_.insert(f.seq, ReorderItem{f.channel, f.payload, f.seq, link, f.sent_at_us});
    stats_.max_held_bytes = std::max(stats_.max_held_bytes, reorder_.held_bytes());
    for (const auto& item : released) deliver(item, now);
  } else {
    ++stats_.duplicates;
  }
  emit_acks(now);
}

void BundleCore::deliver(const ReorderItem& item, TimePoint now) {
  if (item.channel == kControlChannel) {
    auto r = decode(item.payload);
    if (r.status != DecodeStatus::Ok || r.consumed != item.payload.size())
      throw ProtocolError("malformed control message (" + std::to_string(item.payload.size()) +
                          " bytes, seq " + std::to_string(item.seq) + ")");
    handle_control(r.frame, now);
    return;
  }
  auto it = channels_.find(item.channel);
  if (it == channels_.end() || it->second.close_sent) return;
  on_channel_data(it->second.window, item.payload.size());
  stats_.bytes_delivered += item.payload.size();
  record(TraceEvent::Delivered, item.link, item.seq, item.payload.size(),
         to_us(now) - static_cast<std::int64_t>(item.sent_at_us), now);
  handler_.on_channel_data(item.channel, item.payload);
}

void BundleCore::handle_ack(LinkId link, const AckFrame& f, TimePoint now) {
  const TimePoint echo = at_us(static_cast<std::int64_t>(f.echo_ts_us));
  const auto prior_cum = send_.highest_cumulative();
  AckOutcome out = send_.on_ack(f.cum_seq, echo, Duration{f.hold_delay_us}, link, now);

  for (const auto& s : out.rtt_samples) {
    links_[s.link] = update_latency_estimate(links_[s.link], s.rtt, s.queue_delay,
                                             config_.link_model.rtt_alpha);
  }
  for (const auto& a : out.acked) {
    if (a.channel != kControlChannel)
      record(TraceEvent::Acked, a.link, a.seq, a.size, to_us(now) - to_us(a.first_sent_at), now);
  }

  auto& state = links_[link];
  state.consecutive_timeouts = 0;
  if (state.status == LinkStatus::Failed && link_rt_[link].up)
    state.status = link_rt_[link].writable ? LinkStatus::Ready : LinkStatus::Busy;

  const auto cum = send_.highest_cumulative();
  if (cum && cum != prior_cum) {
    // Timed-out copies that the peer has meanwhile confirmed need not go out.
    auto covered = [c = *cum](const ScheduledPacket& p) {
      return p.retransmit_count > 0 && p.seq && *p.seq <= c;
    };
    scheduler_.remove_if(covered);
    std::erase_if(backlog_, covered);
  }
  scheduler_.invalidate();
}

void BundleCore::handle_control(const Frame& frame, TimePoint now) {
  if (const auto* open = std::get_if<OpenFrame>(&frame)) {
    if (channels_.contains(open->channel)) throw ProtocolError("channel id collision");
    if (committed_windows_ + config_.initial_window + kControlSlack > config_.reorder_capacity) {
      send_control(OpenResultFrame{open->channel, OpenCode::Refused}, now);
      return;
    }
    Channel ch;
    ch.window = ChannelWindow::open(open->channel, config_.initial_window);
    channels_.emplace(open->channel, ch);
    committed_windows_ += config_.initial_window;
    handler_.on_open_request(open->channel, open->target);
  } else if (const auto* res = std::get_if<OpenResultFrame>(&frame)) {
    auto it = channels_.find(res->channel);
    if (it == channels_.end()) return;
    if (res->code == OpenCode::Ok) {
      it->second.state = ChannelState::Open;
      it->second.wants_write = true;
    } else {
      committed_windows_ -= it->second.window.initial_window;
      channels_.erase(it);
    }
    handler_.on_open_result(res->channel, res->code);
  } else if (const auto* win = std::get_if<WindowFrame>(&frame)) {
    auto it = channels_.find(win->channel);
    if (it == channels_.end()) return;
    on_window_increment(it->second.window, win->increment);
  } else if (const auto* close = std::get_if<CloseFrame>(&frame)) {
    auto it = channels_.find(close->channel);
    if (it == channels_.end()) return;
    it->second.close_received = true;
    it->second.state = ChannelState::Closing;
    handler_.on_channel_closed(close->channel);
    channel_close(close->channel, now);
  }
}

void BundleCore::emit_acks(TimePoint now) {
  for (const auto& a : recv_.maybe_emit_ack(now)) {
    if (!link_rt_[a.link].up) continue;
    const AckFrame frame{a.cumulative, static_cast<std::uint64_t>(to_us(a.echo)),
                         clamp_u32(a.hold_delay.count())};
    std::vector<std::uint8_t> bytes;
    encode_into(frame, bytes);
    io_.write_frame(a.link, bytes, true);
  }
}

void BundleCore::check_timeouts(TimePoint now) {
  TimedOut t = send_.check_retransmit(now);
  if (t.packets.empty()) return;
  backlog_.insert(backlog_.begin(), std::make_move_iterator(t.packets.begin()),
                  std::make_move_iterator(t.packets.end()));
  for (LinkId l : t.links) {
    auto& s = links_[l];
    s.characteristic.latency = std::min(kMaxSuspectedLatency, s.characteristic.latency * 2);
    if (++s.consecutive_timeouts >= kFailAfterTimeouts) s.status = LinkStatus::Failed;
  }
  scheduler_.invalidate();
}

// ---------------------------------------------------------------------------
// Channels

ChannelId BundleCore::open_channel(const std::string& target, TimePoint now) {
  if (committed_windows_ + config_.initial_window + kControlSlack > config_.reorder_capacity)
    throw ProtocolError("reorder capacity exhausted; cannot open another channel");
  ChannelId id = next_channel_++;
  if (id == kControlChannel) id = next_channel_++;
  Channel ch;
  ch.window = ChannelWindow::open(id, config_.initial_window);
  channels_.emplace(id, ch);
  committed_windows_ += config_.initial_window;
  send_control(OpenFrame{id, target}, now);
  return id;
}

void BundleCore::open_result(ChannelId channel, OpenCode code, TimePoint now) {
  auto it = channels_.find(channel);
  if (it == channels_.end() || it->second.state != ChannelState::Opening) return;
  send_control(OpenResultFrame{channel, code}, now);
  if (code == OpenCode::Ok) {
    it->second.state = ChannelState::Open;
    it->second.wants_write = true;
  } else {
    committed_windows_ -= it->second.window.initial_window;
    channels_.erase(it);
  }
  pump(now);
}

std::size_t BundleCore::channel_write(ChannelId channel, std::span<const std::uint8_t> bytes,
                                      TimePoint now) {
  auto it = channels_.find(channel);
  if (it == channels_.end()) return 0;
  auto& ch = it->second;
  if ((ch.state != ChannelState::Open && ch.state != ChannelState::Opening) || ch.close_sent)
    return 0;

  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::uint64_t>({kChunkSize, bytes.size() - off, ch.window.send_window});
    if (n == 0 || scheduler_.queue().full() || !backlog_.empty()) break;
    if (consume_send_window(ch.window, n) == WindowResult::Blocked) break;
    ScheduledPacket p;
    p.seq = send_.assign_seq();
    p.channel = channel;
    p.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(off + n));
    p.enqueued_at = now;
    scheduler_.enqueue(std::move(p));
    off += n;
  }
  if (off < bytes.size()) ch.wants_write = true;
  pump(now);
  return off;
}

void BundleCore::channel_consumed(ChannelId channel, std::uint64_t bytes, TimePoint now) {
  auto it = channels_.find(channel);
  if (it == channels_.end() || it->second.close_sent) return;
  auto& ch = it->second;
  ch.consumed_total += bytes;
  if (auto inc = grant_window(ch.window, bytes)) {
    ch.granted_total += *inc;
    send_control(WindowFrame{channel, *inc}, now);
  }
}

void BundleCore::channel_close(ChannelId channel, TimePoint now) {
  auto it = channels_.find(channel);
  if (it == channels_.end()) return;
  auto& ch = it->second;
  if (!ch.close_sent) {
    ch.close_sent = true;
    ch.state = ChannelState::Closing;
    send_control(CloseFrame{channel}, now);
  }
  release_channel_if_done(channel);
  pump(now);
}

bool BundleCore::channel_open(ChannelId channel) const {
  auto it = channels_.find(channel);
  return it != channels_.end() && it->second.state == ChannelState::Open;
}

void BundleCore::release_channel_if_done(ChannelId channel) {
  auto it = channels_.find(channel);
  if (it == channels_.end() || !it->second.close_sent || !it->second.close_received) return;
  committed_windows_ -= it->second.window.initial_window;
  channels_.erase(it);
}

void BundleCore::send_control(const Frame& frame, TimePoint now) {
  ScheduledPacket p;
  p.seq = send_.assign_seq();
  p.channel = kControlChannel;
  p.payload = encode(frame);
  p.enqueued_at = now;
  if (backlog_.empty() && !scheduler_.queue().full()) {
    scheduler_.enqueue(std::move(p));
  } else {
    backlog_.push_back(std::move(p));
  }
  pump(now);
}

// ---------------------------------------------------------------------------
// Introspection

Duration BundleCore::max_rto() const {
  Duration r = kMinRto;
  for (const auto& l : links_) r = std::max(r, link_rto(l, kMinRto));
  return r;
}

std::optional<ChannelWindow> BundleCore::window(ChannelId channel) const {
  auto it = channels_.find(channel);
  if (it == channels_.end()) return std::nullopt;
  return it->second.window;
}

std::uint64_t BundleCore::total_granted(ChannelId channel) const {
  auto it = channels_.find(channel);
  return it == channels_.end() ? 0 : it->second.granted_total;
}

std::uint64_t BundleCore::total_consumed(ChannelId channel) const {
  auto it = channels_.find(channel);
  return it == channels_.end() ? 0 : it->second.consumed_total;
}

bool BundleCore::idle() const {
  return scheduler_.queue().empty() && backlog_.empty() && send_.unacked().empty();
}

void BundleCore::check_invariants() const {
  for (const auto& l : links_) {
    if (!(l.in_flight_bytes >= 0.0))
      throw InvariantViolation("negative in-flight bytes on link " + std::to_string(l.link_id));
  }
  const auto& q = scheduler_.queue();
  if (q.size() > q.capacity()) throw InvariantViolation("waiting queue above capacity");
  for (const auto& p : q) {
    if (p.seq && send_.contains(*p.seq))
      throw InvariantViolation("seq " + std::to_string(*p.seq) + " both queued and unacked");
  }
  for (const auto& p : backlog_) {
    if (p.seq && send_.contains(*p.seq))
      throw InvariantViolation("seq " + std::to_string(*p.seq) + " both backlogged and unacked");
  }
  if (reorder_.held_bytes() > reorder_.capacity_bytes())
    throw InvariantViolation("reorder buffer above capacity");
  for (const auto& [id, ch] : channels_) {
    if (ch.granted_total > ch.consumed_total + ch.window.initial_window)
      throw InvariantViolation("window grants exceed consumption on channel " + std::to_string(id));
  }
}

void BundleCore::record(TraceEvent e, LinkId link, Seq seq, std::uint64_t size,
                        std::int64_t latency, TimePoint now) {
  if (trace_) trace_({to_us(now), link, e, seq, size, latency});
}

std::string_view to_string(TraceEvent e) {
  switch (e) {
    case TraceEvent::Sent: return "sent";
    case TraceEvent::Delivered: return "delivered";
    case TraceEvent::Acked: return "acked";
    case TraceEvent::Retransmit: return "retransmit";
  }
  return "?";
}

}  // namespace linkweave
