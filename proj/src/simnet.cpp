#include "linkweave/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <queue>
#include <random>
#include <sstream>
#include <variant>

#include "linkweave/codec.hpp"
#include "linkweave/errors.hpp"
#include "linkweave/reorder_flow.hpp"

namespace linkweave::sim {

// ---------------------------------------------------------------------------
// Scenario format

namespace {

struct Transition {
  TimePoint at{};
  std::size_t order = 0;
  std::optional<Duration> latency;
  std::optional<std::uint64_t> bandwidth;
  std::optional<bool> up;
};

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

double parse_number(const std::string& text, int line, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !std::isfinite(v) || v < 0)
    throw ParseError(line, std::string("bad ") + what + " '" + text + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& text, int line, const char* what) {
  const double v = parse_number(text, line, what);
  if (v != std::floor(v) || v > 1.8e19) throw ParseError(line, std::string("bad ") + what + " '" + text + "'");
  return static_cast<std::uint64_t>(v);
}

Duration parse_ms(const std::string& text, int line, const char* what) {
  return Duration{std::llround(parse_number(text, line, what) * 1000.0)};
}

std::map<std::string, std::string> parse_kv(const std::vector<std::string>& words, std::size_t from,
                                            int line) {
  std::map<std::string, std::string> kv;
  for (std::size_t i = from; i < words.size(); ++i) {
    const auto eq = words[i].find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(line, "expected key=value, got '" + words[i] + "'");
    if (!kv.emplace(words[i].substr(0, eq), words[i].substr(eq + 1)).second)
      throw ParseError(line, "duplicate key '" + words[i].substr(0, eq) + "'");
  }
  return kv;
}

void reject_unknown(const std::map<std::string, std::string>& kv,
                    std::initializer_list<const char*> allowed, int line) {
  for (const auto& [k, v] : kv) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw ParseError(line, "unknown key '" + k + "'");
  }
}

}  // namespace

const Segment& SimLinkSpec::segment_at(TimePoint t) const {
  auto it = std::upper_bound(segments.begin(), segments.end(), t,
                             [](TimePoint v, const Segment& s) { return v < s.start; });
  return it == segments.begin() ? segments.front() : *std::prev(it);
}

Scenario parse_scenario(std::istream& in) {
  Scenario sc;
  std::map<LinkId, std::pair<SimLinkSpec, int>> links;
  std::map<LinkId, std::vector<Transition>> transitions;
  std::vector<std::pair<LinkId, int>> transition_lines;
  std::string raw;
  int line = 0;
  std::size_t order = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto w = split_words(raw);
    if (w.empty()) continue;
    const std::string& d = w[0];
    if (d == "link") {
      if (w.size() < 2) throw ParseError(line, "link needs an id");
      const auto id = parse_uint(w[1], line, "link id");
      if (id > 0xFFFF) throw ParseError(line, "link id too large");
      auto kv = parse_kv(w, 2, line);
      reject_unknown(kv, {"lat", "bw", "buf", "jitter"}, line);
      if (!kv.contains("lat") || !kv.contains("bw")) throw ParseError(line, "link needs lat= and bw=");
      SimLinkSpec spec;
      spec.link_id = static_cast<LinkId>(id);
      spec.segments.push_back({TimePoint{}, parse_ms(kv["lat"], line, "latency"),
                               parse_uint(kv["bw"], line, "bandwidth"), true});
      if (kv.contains("buf")) spec.send_buffer_bytes = parse_uint(kv["buf"], line, "buffer size");
      if (kv.contains("jitter")) spec.jitter = parse_ms(kv["jitter"], line, "jitter");
      if (spec.send_buffer_bytes < kDataHeaderSize + kChunkSize)
        throw ParseError(line, "buffer smaller than one frame");
      if (!links.emplace(spec.link_id, std::make_pair(spec, line)).second)
        throw ParseError(line, "duplicate link " + w[1]);
    } else if (d == "at") {
      if (w.size() < 5 || w[2] != "link") throw ParseError(line, "expected 'at <ms> link <id> ...'");
      Transition t;
      t.at = TimePoint{parse_ms(w[1], line, "time")};
      t.order = order++;
      const auto id = static_cast<LinkId>(parse_uint(w[3], line, "link id"));
      if (w[4] == "down" || w[4] == "up") {
        if (w.size() != 5) throw ParseError(line, "trailing tokens after " + w[4]);
        t.up = w[4] == "up";
      } else if (w[4] == "set") {
        auto kv = parse_kv(w, 5, line);
        reject_unknown(kv, {"lat", "bw"}, line);
        if (kv.empty()) throw ParseError(line, "set needs lat= and/or bw=");
        if (kv.contains("lat")) t.latency = parse_ms(kv["lat"], line, "latency");
        if (kv.contains("bw")) t.bandwidth = parse_uint(kv["bw"], line, "bandwidth");
      } else {
        throw ParseError(line, "unknown link action '" + w[4] + "'");
      }
      transitions[id].push_back(t);
      transition_lines.emplace_back(id, line);
    } else if (d == "send") {
      if (w.size() < 2) throw ParseError(line, "send needs a byte count");
      auto kv = parse_kv(w, 2, line);
      reject_unknown(kv, {"from"}, line);
      SendDirective s;
      s.bytes = parse_uint(w[1], line, "byte count");
      if (kv.contains("from")) s.from = TimePoint{parse_ms(kv["from"], line, "start time")};
      sc.sends.push_back(s);
    } else if (d == "duration") {
      if (w.size() != 2) throw ParseError(line, "duration takes one value");
      sc.duration = parse_ms(w[1], line, "duration");
    } else if (d == "seed") {
      if (w.size() != 2) throw ParseError(line, "seed takes one value");
      sc.seed = parse_uint(w[1], line, "seed");
    } else if (d == "window") {
      if (w.size() != 2) throw ParseError(line, "window takes one value");
      const auto v = parse_uint(w[1], line, "window");
      if (v < 2 * kChunkSize || v > 0x7FFFFFFF) throw ParseError(line, "window out of range");
      sc.window = static_cast<std::uint32_t>(v);
    } else if (d == "queue") {
      if (w.size() != 2) throw ParseError(line, "queue takes one value");
      const auto v = parse_uint(w[1], line, "queue capacity");
      if (v == 0) throw ParseError(line, "queue capacity must be positive");
      sc.queue = static_cast<std::size_t>(v);
    } else {
      throw ParseError(line, "unknown directive '" + d + "'");
    }
  }
  if (links.empty()) throw ParseError(line, "scenario defines no links");
  LinkId expect = 0;
  for (const auto& [id, entry] : links) {
    if (id != expect++) throw ParseError(entry.second, "link ids must be 0..n-1");
  }
  for (const auto& [id, l] : transition_lines) {
    if (!links.contains(id)) throw ParseError(l, "unknown link " + std::to_string(id));
  }
  for (auto& [id, entry] : links) {
    auto& spec = entry.first;
    auto& ts = transitions[id];
    std::stable_sort(ts.begin(), ts.end(), [](const Transition& a, const Transition& b) {
      return a.at < b.at;
    });
    for (const auto& t : ts) {
      Segment next = spec.segments.back();
      next.start = t.at;
      if (t.latency) next.latency = *t.latency;
      if (t.bandwidth) next.bandwidth = *t.bandwidth;
      if (t.up) next.up = *t.up;
      if (next.start == spec.segments.back().start)
        spec.segments.back() = next;
      else
        spec.segments.push_back(next);
    }
    sc.links.push_back(spec);
  }
  return sc;
}

Scenario parse_scenario_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

Scenario parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path);
  return parse_scenario(in);
}

// ---------------------------------------------------------------------------
// Link arithmetic

std::optional<TimePoint> serialization_end(const SimLinkSpec& link, std::uint64_t bytes,
                                           TimePoint start) {
  double remaining = static_cast<double>(bytes);
  TimePoint t = start;
  auto it = std::upper_bound(link.segments.begin(), link.segments.end(), t,
                             [](TimePoint v, const Segment& s) { return v < s.start; });
  if (it != link.segments.begin()) --it;
  for (; it != link.segments.end(); ++it) {
    const auto next = std::next(it);
    const bool last = next == link.segments.end();
    const double bw = static_cast<double>(it->bandwidth);
    if (bw > 0) {
      const double need_us = remaining * 1e6 / bw;
      if (last || t + Duration{static_cast<std::int64_t>(std::ceil(need_us - 1e-6))} <= next->start)
        return t + Duration{static_cast<std::int64_t>(std::ceil(need_us - 1e-6))};
      remaining -= to_seconds(next->start - t) * bw;
    } else if (last) {
      return std::nullopt;
    }
    t = next->start;
  }
  return std::nullopt;
}

std::optional<TimePoint> idle_arrival(const SimLinkSpec& link, std::uint64_t frame_bytes,
                                      TimePoint sent_at) {
  auto end = serialization_end(link, frame_bytes, sent_at);
  if (!end) return std::nullopt;
  const auto& seg = link.segment_at(*end);
  if (!seg.up) return std::nullopt;
  return *end + seg.latency;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

constexpr std::size_t kMaxFrame = kDataHeaderSize + kChunkSize;
constexpr std::uint64_t kUrgentSlack = 4096;
constexpr std::size_t kMaxAppWrite = 65536;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Byte `offset` of the application stream for a given seed.
std::uint8_t stream_byte(std::uint64_t seed, std::uint64_t offset) {
  return static_cast<std::uint8_t>(splitmix64(seed ^ (offset >> 3)) >> ((offset & 7) * 8));
}

enum class EventKind : std::uint8_t { FrameDelivery, SerializationDone, LinkTransition, Timer, AppWrite };

struct Event {
  TimePoint at{};
  std::uint64_t order = 0;
  EventKind kind = EventKind::Timer;
  std::size_t pipe = 0;      // FrameDelivery, SerializationDone
  std::uint64_t epoch = 0;
  std::vector<std::uint8_t> bytes;
  LinkId link = 0;           // LinkTransition
  bool up = true;
  int endpoint = 0;          // Timer
  std::uint64_t app_bytes = 0;  // AppWrite

  bool operator>(const Event& o) const { return at != o.at ? at > o.at : order > o.order; }
};

class Simulation;

/// One direction of a link: a FIFO byte pipe with a bounded send buffer.
struct Pipe {
  const SimLinkSpec* spec = nullptr;
  LinkId link = 0;
  int sender = 0;  // endpoint index writing into this pipe
  std::deque<std::vector<std::uint8_t>> buffer;
  std::uint64_t buffered = 0;
  bool serializing = false;
  bool sender_blocked = false;
  std::uint64_t ser_epoch = 0;
  std::uint64_t flight_epoch = 0;
  std::uint64_t in_flight = 0;
  TimePoint last_arrival{};
  LinkCounters counters;
};

class Endpoint : public LinkIo {
 public:
  Endpoint(Simulation& sim, int index) : sim_(sim), index_(index) {}
  WriteOutcome write_frame(LinkId link, std::span<const std::uint8_t> frame, bool urgent) override;

 private:
  Simulation& sim_;
  int index_;
};

class ClientApp : public ChannelHandler {
 public:
  ClientApp(Simulation& sim, std::uint64_t seed) : sim_(sim), seed_(seed), rng_(seed) {}
  void on_channel_writable(ChannelId) override;
  void write_some();

  BundleCore* core = nullptr;
  ChannelId channel = 0;
  std::uint64_t pending = 0;
  std::uint64_t offset = 0;

 private:
  Simulation& sim_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::vector<std::uint8_t> buf_;
};

class ServerApp : public ChannelHandler {
 public:
  ServerApp(Simulation& sim, std::uint64_t seed) : sim_(sim), seed_(seed) {}
  void on_open_request(ChannelId ch, const std::string&) override;
  void on_channel_data(ChannelId ch, std::span<const std::uint8_t> bytes) override;

  BundleCore* core = nullptr;
  std::uint64_t received = 0;
  bool intact = true;

 private:
  Simulation& sim_;
  std::uint64_t seed_;
};

class Simulation {
 public:
  Simulation(const Scenario& sc, const RunOptions& opt);
  RunResult run();

  TimePoint now() const { return now_; }
  WriteOutcome write(int endpoint, LinkId link, std::span<const std::uint8_t> frame, bool urgent);

 private:
  void push(Event e) {
    e.order = order_++;
    events_.push(std::move(e));
  }
  void start_head(std::size_t pipe_index);
  void on_serialized(std::size_t pipe_index);
  void on_delivery(const Event& e);
  void on_transition(const Event& e);
  void schedule_timers();
  void check(RunResult& r);
  bool transfer_done() const;
  std::size_t pipe_index(int sender, LinkId link) const {
    return static_cast<std::size_t>(link) * 2 + static_cast<std::size_t>(sender);
  }

  const Scenario& sc_;
  RunOptions opt_;
  std::uint64_t seed_;
  TimePoint now_{};
  std::uint64_t order_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<Pipe> pipes_;
  std::mt19937_64 jitter_rng_;

  Endpoint client_io_;
  Endpoint server_io_;
  ClientApp client_app_;
  ServerApp server_app_;
  BundleCore client_;
  BundleCore server_;
  std::optional<TimePoint> pending_timer_[2];

  std::vector<TraceRecord> trace_;
  std::optional<Seq> last_cumulative_;
  std::uint64_t total_to_send_ = 0;
  std::uint64_t sends_fired_ = 0;

  friend class ClientApp;
  friend class ServerApp;
};

BundleConfig make_config(const Scenario& sc, const RunOptions& opt) {
  BundleConfig cfg;
  cfg.scheduler = opt.scheduler;
  if (sc.queue) cfg.queue_capacity = *sc.queue;
  if (sc.window) cfg.initial_window = *sc.window;
  cfg.reorder_capacity = std::max<std::uint64_t>(cfg.reorder_capacity,
                                                 std::uint64_t{cfg.initial_window} + kControlSlack);
  return cfg;
}

WriteOutcome Endpoint::write_frame(LinkId link, std::span<const std::uint8_t> frame, bool urgent) {
  return sim_.write(index_, link, frame, urgent);
}

void ClientApp::on_channel_writable(ChannelId) { write_some(); }

void ClientApp::write_some() {
  std::uniform_int_distribution<std::size_t> size_dist(1, kMaxAppWrite);
  while (pending > 0) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(pending, size_dist(rng_)));
    buf_.resize(n);
    for (std::size_t i = 0; i < n; ++i) buf_[i] = stream_byte(seed_, offset + i);
    const std::size_t accepted = core->channel_write(channel, buf_, sim_.now());
    offset += accepted;
    pending -= accepted;
    if (accepted < n) break;
  }
}

void ServerApp::on_open_request(ChannelId ch, const std::string&) {
  core->open_result(ch, OpenCode::Ok, sim_.now());
}

void ServerApp::on_channel_data(ChannelId ch, std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != stream_byte(seed_, received + i)) intact = false;
  }
  received += bytes.size();
  core->channel_consumed(ch, bytes.size(), sim_.now());
}

Simulation::Simulation(const Scenario& sc, const RunOptions& opt)
    : sc_(sc),
      opt_(opt),
      seed_(opt.seed.value_or(sc.seed)),
      jitter_rng_(splitmix64(seed_)),
      client_io_(*this, 0),
      server_io_(*this, 1),
      client_app_(*this, seed_),
      server_app_(*this, seed_),
      client_(make_config(sc, opt), client_io_, client_app_, sc.links.size(), TimePoint{}),
      server_(make_config(sc, opt), server_io_, server_app_, sc.links.size(), TimePoint{}) {
  client_app_.core = &client_;
  server_app_.core = &server_;
  pipes_.resize(sc.links.size() * 2);
  for (const auto& l : sc.links) {
    for (int s = 0; s < 2; ++s) {
      auto& p = pipes_[pipe_index(s, l.link_id)];
      p.spec = &l;
      p.link = l.link_id;
      p.sender = s;
    }
  }
  auto trace_into = [this](const TraceRecord& r) { trace_.push_back(r); };
  client_.set_trace_sink(trace_into);
  server_.set_trace_sink(trace_into);
}

WriteOutcome Simulation::write(int endpoint, LinkId link, std::span<const std::uint8_t> frame,
                               bool urgent) {
  const std::size_t idx = pipe_index(endpoint, link);
  auto& p = pipes_[idx];
  const std::uint64_t cap = p.spec->send_buffer_bytes + (urgent ? kUrgentSlack : 0);
  if (p.buffered + frame.size() > cap) return {false, true};
  p.buffer.emplace_back(frame.begin(), frame.end());
  p.buffered += frame.size();
  p.counters.injected += frame.size();
  if (!p.serializing) start_head(idx);
  const bool full = p.spec->send_buffer_bytes < p.buffered + kMaxFrame;
  if (full && !urgent) p.sender_blocked = true;
  return {true, full};
}

void Simulation::start_head(std::size_t idx) {
  auto& p = pipes_[idx];
  if (p.buffer.empty()) {
    p.serializing = false;
    return;
  }
  p.serializing = true;
  auto end = serialization_end(*p.spec, p.buffer.front().size(), now_);
  if (!end) return;  // zero bandwidth forever: the pipe stalls
  Event e;
  e.at = *end;
  e.kind = EventKind::SerializationDone;
  e.pipe = idx;
  e.epoch = p.ser_epoch;
  push(std::move(e));
}

void Simulation::on_serialized(std::size_t idx) {
  auto& p = pipes_[idx];
  std::vector<std::uint8_t> frame = std::move(p.buffer.front());
  p.buffer.pop_front();
  p.buffered -= frame.size();
  const auto& seg = p.spec->segment_at(now_);
  if (!seg.up) {
    p.counters.dropped += frame.size();
  } else {
    Duration extra{0};
    if (p.spec->jitter > Duration{0}) {
      std::uniform_int_distribution<std::int64_t> d(0, p.spec->jitter.count());
      extra = Duration{d(jitter_rng_)};
    }
    TimePoint arrival = std::max(now_ + seg.latency + extra, p.last_arrival);
    p.last_arrival = arrival;
    p.in_flight += frame.size();
    Event e;
    e.at = arrival;
    e.kind = EventKind::FrameDelivery;
    e.pipe = idx;
    e.epoch = p.flight_epoch;
    e.bytes = std::move(frame);
    push(std::move(e));
  }
  start_head(idx);
  if (p.sender_blocked && p.spec->send_buffer_bytes >= p.buffered + kMaxFrame) {
    p.sender_blocked = false;
    (p.sender == 0 ? client_ : server_).on_writable(p.link, now_);
  }
}

void Simulation::on_delivery(const Event& e) {
  auto& p = pipes_[e.pipe];
  if (e.epoch != p.flight_epoch) return;  // dropped at a down transition
  p.in_flight -= e.bytes.size();
  p.counters.delivered += e.bytes.size();
  auto r = decode(e.bytes);
  if (r.status != DecodeStatus::Ok || r.consumed != e.bytes.size())
    throw InvariantViolation("simulated link corrupted a frame");
  (p.sender == 0 ? server_ : client_).on_frame(p.link, r.frame, now_);
}

void Simulation::on_transition(const Event& e) {
  for (int s = 0; s < 2; ++s) {
    auto& p = pipes_[pipe_index(s, e.link)];
    if (!e.up) {
      p.counters.dropped += p.in_flight;
      p.in_flight = 0;
      ++p.flight_epoch;
    } else {
      // Reconnect: the old connection and its buffer are gone.
      p.counters.dropped += p.buffered + p.in_flight;
      p.buffer.clear();
      p.buffered = 0;
      p.in_flight = 0;
      p.serializing = false;
      p.sender_blocked = false;
      ++p.ser_epoch;
      ++p.flight_epoch;
    }
  }
  if (e.up) {
    const auto& spec = sc_.links[e.link];
    const Duration rtt = spec.segment_at(now_).latency * 2;
    client_.on_link_down(e.link, now_);
    server_.on_link_down(e.link, now_);
    client_.on_link_up(e.link, now_, rtt);
    server_.on_link_up(e.link, now_, rtt);
  }
}

void Simulation::schedule_timers() {
  BundleCore* cores[2] = {&client_, &server_};
  for (int i = 0; i < 2; ++i) {
    auto w = cores[i]->next_wakeup();
    if (!w) continue;
    if (pending_timer_[i] && *pending_timer_[i] <= *w && *pending_timer_[i] >= now_) continue;
    const TimePoint at = std::max(*w, now_);
    pending_timer_[i] = at;
    Event e;
    e.at = at;
    e.kind = EventKind::Timer;
    e.endpoint = i;
    push(std::move(e));
  }
}

bool Simulation::transfer_done() const {
  return sends_fired_ == sc_.sends.size() && client_app_.pending == 0 &&
         server_app_.received == total_to_send_ && client_.idle();
}

void Simulation::check(RunResult& r) {
  client_.check_invariants();
  server_.check_invariants();
  const auto cum = server_.recv_tracker().cumulative();
  if (last_cumulative_ && (!cum || *cum < *last_cumulative_))
    throw InvariantViolation("receiver cumulative moved backwards");
  last_cumulative_ = cum;
  const auto held = server_.reorder().held_bytes();
  r.max_held_bytes = std::max(r.max_held_bytes, held);
  if (held > required_capacity(client_.max_rto(), client_.links())) ++r.reorder_bound_violations;
}

RunResult Simulation::run() {
  RunResult r;
  r.seed = seed_;
  for (const auto& s : sc_.sends) total_to_send_ += s.bytes;
  const TimePoint transfer_start =
      sc_.sends.empty() ? TimePoint{}
                        : std::min_element(sc_.sends.begin(), sc_.sends.end(), [](auto& a, auto& b) {
                            return a.from < b.from;
                          })->from;

  for (const auto& l : sc_.links) {
    const Duration rtt = l.segments.front().latency * 2;
    if (l.segments.front().up) {
      client_.on_link_up(l.link_id, now_, rtt);
      server_.on_link_up(l.link_id, now_, rtt);
    }
    for (std::size_t i = 1; i < l.segments.size(); ++i) {
      if (l.segments[i].up == l.segments[i - 1].up) continue;
      Event e;
      e.at = l.segments[i].start;
      e.kind = EventKind::LinkTransition;
      e.link = l.link_id;
      e.up = l.segments[i].up;
      push(std::move(e));
    }
  }
  client_app_.channel = client_.open_channel("sim:0", now_);
  for (const auto& s : sc_.sends) {
    Event e;
    e.at = s.from;
    e.kind = EventKind::AppWrite;
    e.app_bytes = s.bytes;
    push(std::move(e));
  }

  const TimePoint end = TimePoint{} + sc_.duration;
  const TimePoint hard_end = end + opt_.drain_limit.value_or(Duration{0});
  TimePoint last_trace_t{};
  std::size_t traced = 0;
  try {
    schedule_timers();
    while (!events_.empty()) {
      const Event& top = events_.top();
      if (top.at > hard_end) break;
      if (top.at > end && (!opt_.drain_limit || transfer_done())) break;
      Event e = top;
      events_.pop();
      now_ = e.at;
      switch (e.kind) {
        case EventKind::FrameDelivery:
          on_delivery(e);
          break;
        case EventKind::SerializationDone:
          if (e.epoch == pipes_[e.pipe].ser_epoch) on_serialized(e.pipe);
          break;
        case EventKind::LinkTransition:
          on_transition(e);
          break;
        case EventKind::Timer:
          if (pending_timer_[e.endpoint] == e.at) pending_timer_[e.endpoint].reset();
          (e.endpoint == 0 ? client_ : server_).on_timer(now_);
          break;
        case EventKind::AppWrite:
          ++sends_fired_;
          client_app_.pending += e.app_bytes;
          client_app_.write_some();
          break;
      }
      schedule_timers();
      if (opt_.check_invariants) {
        check(r);
        for (; traced < trace_.size(); ++traced) {
          if (TimePoint{Duration{trace_[traced].t_us}} < last_trace_t)
            throw InvariantViolation("trace went backwards in time");
          last_trace_t = TimePoint{Duration{trace_[traced].t_us}};
        }
      }
      if (transfer_done() && now_ >= end) break;
      if (transfer_done() && events_.empty()) break;
    }
  } catch (const InvariantViolation& ex) {
    r.invariant_failure = ex.what();
  } catch (const ProtocolError& ex) {
    r.invariant_failure = std::string("protocol error: ") + ex.what();
  }

  r.end_time = now_;
  r.app_bytes_written = client_app_.offset;
  r.app_bytes_received = server_app_.received;
  r.complete = server_app_.received == total_to_send_ && sends_fired_ == sc_.sends.size();
  r.stream_intact = server_app_.intact && server_app_.received <= client_app_.offset;
  for (std::size_t l = 0; l < sc_.links.size(); ++l) {
    LinkCounters c;
    for (int s = 0; s < 2; ++s) {
      const auto& p = pipes_[pipe_index(s, static_cast<LinkId>(l))];
      c.injected += p.counters.injected;
      c.delivered += p.counters.delivered;
      c.dropped += p.counters.dropped;
      c.in_flight += p.in_flight + p.buffered;
    }
    if (opt_.check_invariants && !r.invariant_failure &&
        c.injected != c.delivered + c.dropped + c.in_flight)
      r.invariant_failure = "link " + std::to_string(l) + " byte conservation violated";
    r.link_counters.push_back(c);
  }
  r.summary = metrics::summarize(trace_, transfer_start, sc_.links.size());
  r.trace = std::move(trace_);
  return r;
}

}  // namespace

RunResult run(const Scenario& scenario, const RunOptions& options) {
  Simulation sim(scenario, options);
  return sim.run();
}

}  // namespace linkweave::sim
