#include "linkweave/codec.hpp"

#include <cstring>

namespace linkweave {

namespace {

void put_u8(std::vector<std::uint8_t>& o, std::uint8_t v) { o.push_back(v); }
void put_u16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(static_cast<std::uint8_t>(v >> 8));
  o.push_back(static_cast<std::uint8_t>(v));
}
void put_u32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) o.push_back(static_cast<std::uint8_t>(v >> s));
}
void put_u64(std::vector<std::uint8_t>& o, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) o.push_back(static_cast<std::uint8_t>(v >> s));
}

struct Cursor {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;

  bool has(std::size_t n) const { return in.size() - pos >= n; }
  std::uint8_t u8() { return in[pos++]; }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>((in[pos] << 8) | in[pos + 1]);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | in[pos++];
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | in[pos++];
    return v;
  }
};

DecodeResult need_more() { return {}; }

DecodeResult codec_error(std::string why) {
  DecodeResult r;
  r.status = DecodeStatus::CodecError;
  r.error = std::move(why);
  return r;
}

DecodeResult ok(Frame f, std::size_t consumed) {
  DecodeResult r;
  r.status = DecodeStatus::Ok;
  r.frame = std::move(f);
  r.consumed = consumed;
  return r;
}

}  // namespace

std::size_t encoded_size(const Frame& frame) {
  struct {
    std::size_t operator()(const DataFrame& f) const { return kDataHeaderSize + f.payload.size(); }
    std::size_t operator()(const AckFrame&) const { return 1 + 8 + 8 + 4; }
    std::size_t operator()(const OpenFrame& f) const { return 1 + 4 + 2 + f.target.size(); }
    std::size_t operator()(const OpenResultFrame&) const { return 1 + 4 + 1; }
    std::size_t operator()(const WindowFrame&) const { return 1 + 4 + 4; }
    std::size_t operator()(const CloseFrame&) const { return 1 + 4; }
    std::size_t operator()(const HelloFrame&) const { return 1 + 16 + 2 + 8; }
  } size;
  return std::visit(size, frame);
}

void encode_into(const Frame& frame, std::vector<std::uint8_t>& o) {
  o.reserve(o.size() + encoded_size(frame));
  std::visit(
      [&o](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, DataFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Data));
          put_u32(o, f.channel);
          put_u64(o, f.seq);
          put_u64(o, f.sent_at_us);
          put_u16(o, static_cast<std::uint16_t>(f.payload.size()));
          o.insert(o.end(), f.payload.begin(), f.payload.end());
        } else if constexpr (std::is_same_v<T, AckFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Ack));
          put_u64(o, f.cum_seq);
          put_u64(o, f.echo_ts_us);
          put_u32(o, f.hold_delay_us);
        } else if constexpr (std::is_same_v<T, OpenFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Open));
          put_u32(o, f.channel);
          put_u16(o, static_cast<std::uint16_t>(f.target.size()));
          o.insert(o.end(), f.target.begin(), f.target.end());
        } else if constexpr (std::is_same_v<T, OpenResultFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::OpenResult));
          put_u32(o, f.channel);
          put_u8(o, static_cast<std::uint8_t>(f.code));
        } else if constexpr (std::is_same_v<T, WindowFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Window));
          put_u32(o, f.channel);
          put_u32(o, f.increment);
        } else if constexpr (std::is_same_v<T, CloseFrame>) {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Close));
          put_u32(o, f.channel);
        } else {
          put_u8(o, static_cast<std::uint8_t>(FrameType::Hello));
          o.insert(o.end(), f.token.begin(), f.token.end());
          put_u16(o, f.link_id);
          put_u64(o, f.session);
        }
      },
      frame);
}

std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out;
  encode_into(frame, out);
  return out;
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  Cursor c{bytes};
  if (!c.has(1)) return need_more();
  const std::uint8_t type = c.u8();
  switch (static_cast<FrameType>(type)) {
    case FrameType::Data: {
      if (!c.has(kDataHeaderSize - 1)) return need_more();
      DataFrame f;
      f.channel = c.u32();
      f.seq = c.u64();
      f.sent_at_us = c.u64();
      const std::uint16_t len = c.u16();
      if (len == 0 || len > kChunkSize) return codec_error("DATA payload length out of range");
      if (!c.has(len)) return need_more();
      f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
      return ok(std::move(f), c.pos + len);
    }
    case FrameType::Ack: {
      if (!c.has(20)) return need_more();
      AckFrame f;
      f.cum_seq = c.u64();
      f.echo_ts_us = c.u64();
      f.hold_delay_us = c.u32();
      return ok(f, c.pos);
    }
    case FrameType::Open: {
      if (!c.has(6)) return need_more();
      OpenFrame f;
      f.channel = c.u32();
      const std::uint16_t len = c.u16();
      if (len == 0 || len > kMaxTargetLength) return codec_error("OPEN target length out of range");
      if (!c.has(len)) return need_more();
      f.target.assign(reinterpret_cast<const char*>(bytes.data() + c.pos), len);
      return ok(std::move(f), c.pos + len);
    }
    case FrameType::OpenResult: {
      if (!c.has(5)) return need_more();
      OpenResultFrame f;
      f.channel = c.u32();
      const std::uint8_t code = c.u8();
      if (code > 2) return codec_error("OPEN_RESULT code out of range");
      f.code = static_cast<OpenCode>(code);
      return ok(f, c.pos);
    }
    case FrameType::Window: {
      if (!c.has(8)) return need_more();
      WindowFrame f;
      f.channel = c.u32();
      f.increment = c.u32();
      return ok(f, c.pos);
    }
    case FrameType::Close: {
      if (!c.has(4)) return need_more();
      const CloseFrame f{c.u32()};
      return ok(f, c.pos);
    }
    case FrameType::Hello: {
      if (!c.has(26)) return need_more();
      HelloFrame f;
      std::memcpy(f.token.data(), bytes.data() + c.pos, 16);
      c.pos += 16;
      f.link_id = c.u16();
      f.session = c.u64();
      return ok(f, c.pos);
    }
  }
  return codec_error("unknown frame type " + std::to_string(type));
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > 65536 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

DecodeResult FrameReader::next() {
  auto r = decode(std::span<const std::uint8_t>(buf_).subspan(pos_));
  if (r.status == DecodeStatus::Ok) pos_ += r.consumed;
  return r;
}

const char* frame_name(const Frame& f) {
  static constexpr const char* names[] = {"DATA",   "ACK",   "OPEN", "OPEN_RESULT",
                                          "WINDOW", "CLOSE", "HELLO"};
  return names[f.index()];
}

}  // namespace linkweave
