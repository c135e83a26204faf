#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "linkweave/link_model.hpp"
#include "linkweave/scheduler.hpp"

namespace linkweave {

// Wire frames. All integers are big-endian; variable fields carry a u16
// length prefix.

enum class FrameType : std::uint8_t {
  Data = 0x01,
  Ack = 0x02,
  Open = 0x03,
  OpenResult = 0x04,
  Window = 0x05,
  Close = 0x06,
  Hello = 0x07,
};

struct DataFrame {
  ChannelId channel = 0;
  Seq seq = 0;
  std::uint64_t sent_at_us = 0;
  std::vector<std::uint8_t> payload;
  bool operator==(const DataFrame&) const = default;
};

struct AckFrame {
  Seq cum_seq = 0;
  std::uint64_t echo_ts_us = 0;
  std::uint32_t hold_delay_us = 0;
  bool operator==(const AckFrame&) const = default;
};

struct OpenFrame {
  ChannelId channel = 0;
  std::string target;  ///< "host:port"
  bool operator==(const OpenFrame&) const = default;
};

enum class OpenCode : std::uint8_t { Ok = 0, Refused = 1, Unreachable = 2 };

struct OpenResultFrame {
  ChannelId channel = 0;
  OpenCode code = OpenCode::Ok;
  bool operator==(const OpenResultFrame&) const = default;
};

struct WindowFrame {
  ChannelId channel = 0;
  std::uint32_t increment = 0;
  bool operator==(const WindowFrame&) const = default;
};

struct CloseFrame {
  ChannelId channel = 0;
  bool operator==(const CloseFrame&) const = default;
};

using BundleToken = std::array<std::uint8_t, 16>;

/// First frame on a fresh link connection; associates it with a bundle.
/// `session` is chosen by the client at startup so the server can tell a
/// restarted client from a reconnecting link.
struct HelloFrame {
  BundleToken token{};
  LinkId link_id = 0;
  std::uint64_t session = 0;
  bool operator==(const HelloFrame&) const = default;
};

using Frame = std::variant<DataFrame, AckFrame, OpenFrame, OpenResultFrame, WindowFrame,
                           CloseFrame, HelloFrame>;

inline constexpr std::size_t kDataHeaderSize = 1 + 4 + 8 + 8 + 2;
inline constexpr std::size_t kMaxTargetLength = 512;

std::vector<std::uint8_t> encode(const Frame& frame);
void encode_into(const Frame& frame, std::vector<std::uint8_t>& out);
std::size_t encoded_size(const Frame& frame);

enum class DecodeStatus { Ok, NeedMoreData, CodecError };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMoreData;
  Frame frame;
  /// Bytes consumed; zero unless status is Ok.
  std::size_t consumed = 0;
  std::string error;
};

/// Decodes one frame from the front of `bytes` without consuming on short
/// input.
DecodeResult decode(std::span<const std::uint8_t> bytes);

/// Accumulates stream reads and yields whole frames.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete frame, NeedMoreData, or CodecError (sticky).
  DecodeResult next();
  std::size_t buffered() const { return buf_.size() - pos_; }
  void reset() {
    buf_.clear();
    pos_ = 0;
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

const char* frame_name(const Frame& f);

}  // namespace linkweave
