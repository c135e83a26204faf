#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "linkweave/link_model.hpp"
#include "linkweave/scheduler.hpp"
#include "linkweave/time.hpp"

namespace linkweave {

inline constexpr Duration kAckInterval = 25ms;
inline constexpr std::uint64_t kAckBytesThreshold = 64 * 1024;
inline constexpr Duration kMinRto = 200ms;
inline constexpr std::uint32_t kFailAfterTimeouts = 3;
/// Cumulative value carried by an ACK before anything is contiguous.
inline constexpr Seq kNoCumulative = ~Seq{0};

struct UnackedEntry {
  ScheduledPacket packet;
  TimePoint sent_at{};
  LinkId link = 0;
  TimePoint rto_deadline{};
  /// The peer echoed a later frame on the same link; links are FIFO streams,
  /// so this transmission arrived and is no longer subject to the RTO.
  bool link_delivered = false;
};

struct RttSample {
  LinkId link = 0;
  Duration rtt{0};
  Duration queue_delay{0};
};

struct AckedPacket {
  Seq seq = 0;
  ChannelId channel = 0;
  LinkId link = 0;
  std::size_t size = 0;
  TimePoint first_sent_at{};
};

struct AckOutcome {
  std::vector<AckedPacket> acked;
  std::vector<RttSample> rtt_samples;
};

struct TimedOut {
  /// Ascending seq order.
  std::vector<ScheduledPacket> packets;
  /// Links that carried at least one timed-out packet, ascending.
  std::vector<LinkId> links;
};

/// Sender half of the reliability layer.
class SendTracker {
 public:
  /// Next stream sequence ID. Throws ProtocolError instead of wrapping.
  Seq assign_seq();
  Seq next_seq() const { return next_seq_; }
  /// Test hook for the wraparound boundary.
  void set_next_seq(Seq s) { next_seq_ = s; }

  /// Registers a transmission of `packet` (seq already assigned) on `link`.
  /// `queue_delay` is the time the sender expects it to wait behind bytes
  /// already queued on the link.
  void on_transmit(ScheduledPacket packet, LinkId link, TimePoint sent_at, Duration rto,
                   Duration queue_delay);

  /// Processes an ACK that arrived on `link`. `echo` is the send timestamp of
  /// the newest DATA the peer received on that link. Throws ProtocolError if
  /// `cumulative` covers a seq never assigned.
  AckOutcome on_ack(Seq cumulative, std::optional<TimePoint> echo, Duration hold_delay,
                    LinkId link, TimePoint now);

  /// Removes and returns every entry whose deadline has passed.
  TimedOut check_retransmit(TimePoint now);

  /// Makes every unconfirmed transmission on `link` due immediately (the
  /// link's transport was torn down).
  void expire_link(LinkId link, TimePoint now);

  std::optional<TimePoint> next_deadline() const;
  const std::map<Seq, UnackedEntry>& unacked() const { return unacked_; }
  bool contains(Seq s) const { return unacked_.contains(s); }
  std::optional<Seq> highest_cumulative() const { return cumulative_; }

 private:
  struct LogEntry {
    TimePoint sent_at;
    Seq seq;
    Duration queue_delay;
    bool retransmit;
  };

  Seq next_seq_ = 0;
  std::optional<Seq> cumulative_;
  std::map<Seq, UnackedEntry> unacked_;
  std::set<std::pair<TimePoint, Seq>> deadlines_;
  std::map<LinkId, std::deque<LogEntry>> send_log_;
};

struct LinkAck {
  LinkId link = 0;
  Seq cumulative = kNoCumulative;
  TimePoint echo{};
  Duration hold_delay{0};
};

/// Receiver half: cumulative position, out-of-order set, ACK pacing.
class RecvTracker {
 public:
  /// Returns false for a duplicate.
  bool on_receive(Seq seq);
  /// Records receipt metadata used for timestamp echo on `link`.
  void note_arrival(LinkId link, TimePoint sent_at, std::size_t bytes, TimePoint now);

  /// One ACK per link that delivered data since the last emission, once
  /// kAckInterval has passed or kAckBytesThreshold bytes arrived.
  std::vector<LinkAck> maybe_emit_ack(TimePoint now);
  std::optional<TimePoint> next_ack_due() const;

  std::optional<Seq> cumulative() const {
    return next_expected_ == 0 ? std::nullopt : std::optional<Seq>(next_expected_ - 1);
  }
  const std::set<Seq>& received_set() const { return received_; }
  TimePoint last_ack_sent_at() const { return last_ack_sent_at_; }

 private:
  struct EchoState {
    TimePoint sent_at{};
    TimePoint arrived_at{};
    bool pending = false;
  };

  Seq next_expected_ = 0;
  std::set<Seq> received_;
  TimePoint last_ack_sent_at_{};
  std::uint64_t bytes_since_ack_ = 0;
  std::map<LinkId, EchoState> echo_;
};

}  // namespace linkweave
