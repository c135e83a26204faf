#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "linkweave/codec.hpp"
#include "linkweave/link_model.hpp"
#include "linkweave/reliability.hpp"
#include "linkweave/reorder_flow.hpp"
#include "linkweave/scheduler.hpp"
#include "linkweave/time.hpp"
#include "linkweave/trace.hpp"

namespace linkweave {

/// Channel carrying OPEN / OPEN_RESULT / WINDOW / CLOSE inside the reliable
/// sequenced stream.
inline constexpr ChannelId kControlChannel = 0xFFFFFFFFu;
inline constexpr std::uint64_t kControlSlack = 64 * 1024;
inline constexpr Duration kBandwidthSamplePeriod = 100ms;

struct BundleConfig {
  SchedulerKind scheduler = SchedulerKind::Edpf;
  std::size_t queue_capacity = kDefaultQueueCapacity;
  std::uint32_t initial_window = kInitialWindow;
  /// Bytes the receiver is willing to hold out of order. Channels are only
  /// accepted while the sum of their windows fits.
  std::uint64_t reorder_capacity = 32ull * kInitialWindow + kControlSlack;
  LinkModelConfig link_model;
};

/// Outcome of handing a frame to a link transport.
struct WriteOutcome {
  bool accepted = false;
  /// The transport cannot take another full-size frame right now.
  bool now_full = false;
};

/// Byte transport under each link.
class LinkIo {
 public:
  virtual ~LinkIo() = default;
  /// Queues one encoded frame on `link`. `urgent` frames (ACKs) may exceed the
  /// nominal buffer and are allowed to be dropped.
  virtual WriteOutcome write_frame(LinkId link, std::span<const std::uint8_t> frame,
                                   bool urgent) = 0;
};

/// Application side of tunneled channels.
class ChannelHandler {
 public:
  virtual ~ChannelHandler() = default;
  virtual void on_open_request(ChannelId, const std::string& /*target*/) {}
  virtual void on_open_result(ChannelId, OpenCode) {}
  virtual void on_channel_data(ChannelId, std::span<const std::uint8_t>) {}
  virtual void on_channel_closed(ChannelId) {}
  /// Credit or queue space returned after a short channel_write.
  virtual void on_channel_writable(ChannelId) {}
};

struct BundleStats {
  std::uint64_t data_packets_sent = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t bytes_delivered = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t max_held_bytes = 0;
};

/// One endpoint of a bundle: scheduling, reliability, reordering and channel
/// flow control for a fixed set of links. Single-threaded; every entry point
/// takes the current time and runs the resulting sends before returning.
class BundleCore {
 public:
  BundleCore(BundleConfig config, LinkIo& io, ChannelHandler& handler, std::size_t link_count,
             TimePoint now);

  void set_trace_sink(TraceSink sink) { trace_ = std::move(sink); }

  // Link transport events.
  /// Transport (re)connected. `handshake_rtt`, when known, seeds the
  /// latency estimate before any ACK arrives.
  void on_link_up(LinkId link, TimePoint now, std::optional<Duration> handshake_rtt = {});
  void on_link_down(LinkId link, TimePoint now);
  void on_writable(LinkId link, TimePoint now);
  void on_frame(LinkId link, const Frame& frame, TimePoint now);
  void on_timer(TimePoint now);
  std::optional<TimePoint> next_wakeup() const;

  // Channels.
  ChannelId open_channel(const std::string& target, TimePoint now);
  void open_result(ChannelId channel, OpenCode code, TimePoint now);
  /// Accepts as many bytes as window and queue allow; the rest must be
  /// offered again after on_channel_writable. Writing is allowed as soon as
  /// the channel is opened locally; data follows the OPEN in stream order.
  std::size_t channel_write(ChannelId channel, std::span<const std::uint8_t> bytes, TimePoint now);
  /// The local application consumed `bytes` previously delivered.
  void channel_consumed(ChannelId channel, std::uint64_t bytes, TimePoint now);
  void channel_close(ChannelId channel, TimePoint now);
  bool channel_open(ChannelId channel) const;

  /// Raises InvariantViolation describing the first broken invariant.
  void check_invariants() const;

  // Introspection.
  std::span<const LinkState> links() const { return links_; }
  const Scheduler& scheduler() const { return scheduler_; }
  const SendTracker& send_tracker() const { return send_; }
  const RecvTracker& recv_tracker() const { return recv_; }
  const ReorderBuffer& reorder() const { return reorder_; }
  const BundleStats& stats() const { return stats_; }
  const BundleConfig& config() const { return config_; }
  /// Largest retransmission timeout over all links.
  Duration max_rto() const;
  std::optional<ChannelWindow> window(ChannelId channel) const;
  std::uint64_t total_granted(ChannelId channel) const;
  std::uint64_t total_consumed(ChannelId channel) const;
  /// True when nothing is queued, unacknowledged or awaiting retransmission.
  bool idle() const;

 private:
  enum class ChannelState { Opening, Open, Closing, Closed };

  struct Channel {
    ChannelWindow window;
    ChannelState state = ChannelState::Opening;
    bool close_sent = false;
    bool close_received = false;
    bool wants_write = false;
    std::uint64_t granted_total = 0;
    std::uint64_t consumed_total = 0;
  };

  struct LinkRuntime {
    bool up = false;
    bool writable = false;
    bool ever_up = false;
    std::int64_t last_stamp_us = -1;
  };

  void pump(TimePoint now);
  bool send_one(LinkId link, TimePoint now);
  void transmit(LinkId link, ScheduledPacket packet, TimePoint now);
  void handle_data(LinkId link, const DataFrame& frame, TimePoint now);
  void handle_ack(LinkId link, const AckFrame& frame, TimePoint now);
  void handle_control(const Frame& frame, TimePoint now);
  void deliver(const ReorderItem& item, TimePoint now);
  void send_control(const Frame& frame, TimePoint now);
  void emit_acks(TimePoint now);
  void check_timeouts(TimePoint now);
  void note_full(LinkId link, TimePoint now);
  void close_drain_window(LinkId link);
  void release_channel_if_done(ChannelId channel);
  void record(TraceEvent e, LinkId link, Seq seq, std::uint64_t size, std::int64_t latency,
              TimePoint now);

  BundleConfig config_;
  LinkIo& io_;
  ChannelHandler& handler_;
  std::vector<LinkState> links_;
  std::vector<LinkRuntime> link_rt_;
  Scheduler scheduler_;
  SendTracker send_;
  RecvTracker recv_;
  ReorderBuffer reorder_;
  std::deque<ScheduledPacket> backlog_;  // retransmissions and control, ahead of fresh data
  std::map<ChannelId, Channel> channels_;
  ChannelId next_channel_ = 0;
  std::uint64_t committed_windows_ = 0;
  std::size_t rr_cursor_ = 0;
  bool pumping_ = false;
  std::vector<std::uint8_t> scratch_;
  TraceSink trace_;
  BundleStats stats_;
};

}  // namespace linkweave
