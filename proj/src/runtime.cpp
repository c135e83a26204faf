#include "linkweave/runtime.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <ifaddrs.h>
#include <net/if.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <map>
#include <mutex>
#include <random>
#include <system_error>

#include "linkweave/errors.hpp"
#include "log.hpp"

namespace linkweave::net {

// ---------------------------------------------------------------------------
// Parsing helpers

BundleToken parse_token(const std::string& hex) {
  if (hex.size() != 32) throw std::invalid_argument("token must be 32 hex digits");
  BundleToken t{};
  for (std::size_t i = 0; i < 16; ++i) {
    const std::string byte = hex.substr(2 * i, 2);
    if (!std::isxdigit(static_cast<unsigned char>(byte[0])) ||
        !std::isxdigit(static_cast<unsigned char>(byte[1])))
      throw std::invalid_argument("token must be 32 hex digits");
    t[i] = static_cast<std::uint8_t>(std::stoul(byte, nullptr, 16));
  }
  return t;
}

LinkSpec parse_link_spec(const std::string& text) {
  LinkSpec s;
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    s.local = text;
  } else {
    s.local = text.substr(0, eq);
    s.server = text.substr(eq + 1);
  }
  return s;
}

ForwardRule parse_forward(const std::string& text) {
  // Split from the right: the target is always the last "host:port".
  const auto p2 = text.rfind(':');
  if (p2 == std::string::npos) throw std::invalid_argument("forward needs LPORT:HOST:PORT");
  const auto p1 = text.rfind(':', p2 - 1);
  if (p1 == std::string::npos || p1 == 0) throw std::invalid_argument("forward needs LPORT:HOST:PORT");
  ForwardRule r;
  r.target = text.substr(p1 + 1);
  const std::string head = text.substr(0, p1);
  const auto p0 = head.rfind(':');
  if (p0 == std::string::npos)
    r.listen = "127.0.0.1:" + head;
  else
    r.listen = head;
  if (r.target.empty() || r.target.back() == ':' || r.listen.back() == ':')
    throw std::invalid_argument("forward needs LPORT:HOST:PORT");
  return r;
}

namespace {

// ---------------------------------------------------------------------------
// Socket helpers

constexpr std::size_t kReadChunk = 64 * 1024;
constexpr std::size_t kUrgentSlack = 16 * 1024;
constexpr Duration kHelloTimeout = 10s;
constexpr Duration kMaxPollWait = 1s;

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

struct SockAddr {
  sockaddr_storage addr{};
  socklen_t len = 0;
};

std::pair<std::string, std::string> split_host_port(const std::string& text) {
  if (!text.empty() && text.front() == '[') {
    const auto close = text.find(']');
    if (close == std::string::npos || close + 1 >= text.size() || text[close + 1] != ':')
      throw std::invalid_argument("bad address '" + text + "'");
    return {text.substr(1, close - 1), text.substr(close + 2)};
  }
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("address needs a port: '" + text + "'");
  return {text.substr(0, colon), text.substr(colon + 1)};
}

std::vector<SockAddr> resolve(const std::string& hostport, bool passive) {
  auto [host, port] = split_host_port(hostport);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = passive ? AI_PASSIVE : 0;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw std::runtime_error("cannot resolve '" + hostport + "': " + gai_strerror(rc));
  std::vector<SockAddr> out;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    SockAddr a;
    std::memcpy(&a.addr, ai->ai_addr, ai->ai_addrlen);
    a.len = static_cast<socklen_t>(ai->ai_addrlen);
    out.push_back(a);
  }
  ::freeaddrinfo(res);
  return out;
}

/// Local address for a link: an interface name or a literal address.
std::optional<SockAddr> resolve_local(const std::string& local, int family) {
  if (local.empty() || local == "any") return std::nullopt;
  SockAddr a;
  if (family == AF_INET) {
    auto* sin = reinterpret_cast<sockaddr_in*>(&a.addr);
    if (::inet_pton(AF_INET, local.c_str(), &sin->sin_addr) == 1) {
      sin->sin_family = AF_INET;
      a.len = sizeof(sockaddr_in);
      return a;
    }
  } else if (family == AF_INET6) {
    auto* sin6 = reinterpret_cast<sockaddr_in6*>(&a.addr);
    if (::inet_pton(AF_INET6, local.c_str(), &sin6->sin6_addr) == 1) {
      sin6->sin6_family = AF_INET6;
      a.len = sizeof(sockaddr_in6);
      return a;
    }
  }
  ifaddrs* ifs = nullptr;
  if (::getifaddrs(&ifs) != 0) throw_errno("getifaddrs");
  std::optional<SockAddr> found;
  for (auto* i = ifs; i; i = i->ifa_next) {
    if (!i->ifa_addr || i->ifa_addr->sa_family != family || local != i->ifa_name) continue;
    SockAddr f;
    f.len = family == AF_INET ? sizeof(sockaddr_in) : sizeof(sockaddr_in6);
    std::memcpy(&f.addr, i->ifa_addr, f.len);
    found = f;
    break;
  }
  ::freeifaddrs(ifs);
  if (!found) throw std::runtime_error("no usable address for local '" + local + "'");
  return found;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) throw_errno("fcntl");
}

void tune_link_socket(int fd, int sndbuf) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (sndbuf > 0) ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &sndbuf, sizeof sndbuf);
}

int make_listener(const std::string& address) {
  int last_errno = 0;
  for (const auto& a : resolve(address, true)) {
    const int fd = ::socket(a.addr.ss_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) {
      last_errno = errno;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, reinterpret_cast<const sockaddr*>(&a.addr), a.len) == 0 && ::listen(fd, 128) == 0) {
      set_nonblocking(fd);
      return fd;
    }
    last_errno = errno;
    ::close(fd);
  }
  errno = last_errno;
  throw_errno("cannot listen on " + address);
}

std::uint16_t bound_port(int fd) {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return 0;
  if (ss.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  return 0;
}

/// Starts a non-blocking connect. Returns the fd and whether it completed.
std::pair<int, bool> start_connect(const SockAddr& to, const std::optional<SockAddr>& from, int sndbuf,
                                   bool link_socket) {
  const int fd = ::socket(to.addr.ss_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw_errno("socket");
  try {
    if (from && ::bind(fd, reinterpret_cast<const sockaddr*>(&from->addr), from->len) != 0)
      throw_errno("bind local address");
    if (link_socket) tune_link_socket(fd, sndbuf);
    set_nonblocking(fd);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&to.addr), to.len) == 0) return {fd, true};
    if (errno != EINPROGRESS) throw_errno("connect");
  } catch (...) {
    ::close(fd);
    throw;
  }
  return {fd, false};
}

int socket_error(int fd) {
  int err = 0;
  socklen_t len = sizeof err;
  if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0) return errno;
  return err;
}

class Wakeup {
 public:
  Wakeup() {
    if (::pipe2(fds_, O_NONBLOCK | O_CLOEXEC) != 0) throw_errno("pipe2");
  }
  ~Wakeup() {
    ::close(fds_[0]);
    ::close(fds_[1]);
  }
  int fd() const { return fds_[0]; }
  void notify() const {
    const char c = 1;
    [[maybe_unused]] auto n = ::write(fds_[1], &c, 1);
  }
  void drain() const {
    char buf[64];
    while (::read(fds_[0], buf, sizeof buf) > 0) {
    }
  }

 private:
  int fds_[2]{-1, -1};
};

// ---------------------------------------------------------------------------
// Shared event loop

struct LinkConn {
  int fd = -1;
  bool connecting = false;
  bool up = false;
  bool broken = false;
  FrameReader reader;
  std::vector<std::uint8_t> out;
  std::size_t out_pos = 0;
  TimePoint since{};

  std::size_t pending() const { return out.size() - out_pos; }
};

struct Tunnel {
  int fd = -1;
  bool connecting = false;
  bool local_eof = false;
  bool peer_closed = false;
  bool dead = false;
  std::vector<std::uint8_t> to_sock;
  std::size_t to_pos = 0;
  std::vector<std::uint8_t> from_sock;
  std::size_t from_pos = 0;
};

enum class TagKind { Wake, Listener, Pending, Link, Tunnel };

struct Tag {
  TagKind kind;
  std::size_t index;
};

class Loop : public LinkIo, public ChannelHandler {
 public:
  Loop(BundleConfig config, std::size_t link_count)
      : links_(link_count), config_(config), link_count_(link_count), epoch_(std::chrono::steady_clock::now()) {}
  ~Loop() override {
    for (auto& l : links_)
      if (l.fd >= 0) ::close(l.fd);
    for (auto& [id, t] : tunnels_)
      if (t.fd >= 0) ::close(t.fd);
  }

  void run() {
    std::signal(SIGPIPE, SIG_IGN);
    std::vector<pollfd> pfds;
    std::vector<Tag> tags;
    while (!stop_.load()) {
      step_timers();
      settle();
      pfds.clear();
      tags.clear();
      pfds.push_back({wake_.fd(), POLLIN, 0});
      tags.push_back({TagKind::Wake, 0});
      add_own_fds(pfds, tags);
      for (std::size_t i = 0; i < links_.size(); ++i) {
        const auto& l = links_[i];
        if (l.fd < 0) continue;
        short ev = POLLIN;
        if (l.connecting || l.pending() > 0) ev |= POLLOUT;
        if (l.connecting) ev = POLLOUT;
        pfds.push_back({l.fd, ev, 0});
        tags.push_back({TagKind::Link, i});
      }
      for (const auto& [id, t] : tunnels_) {
        if (t.fd < 0 || t.dead) continue;
        short ev = 0;
        if (wants_read(t)) ev |= POLLIN;
        if (t.connecting || t.to_pos < t.to_sock.size()) ev |= POLLOUT;
        pfds.push_back({t.fd, ev, 0});
        tags.push_back({TagKind::Tunnel, id});
      }
      const int rc = ::poll(pfds.data(), pfds.size(), poll_timeout_ms());
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw_errno("poll");
      }
      for (std::size_t i = 0; i < pfds.size(); ++i) {
        if (!pfds[i].revents) continue;
        guarded([&] { dispatch(tags[i], pfds[i].revents); });
      }
      publish_stats();
    }
  }

  void stop() {
    stop_.store(true);
    wake_.notify();
  }

  RuntimeStats stats() const {
    std::lock_guard lock(stats_mu_);
    return stats_;
  }

  // LinkIo
  WriteOutcome write_frame(LinkId link, std::span<const std::uint8_t> frame, bool urgent) override {
    auto& c = links_.at(link);
    if (c.fd < 0 || c.connecting || c.broken) return {false, true};
    if (c.pending() > 0) {
      if (!urgent || c.pending() + frame.size() > kUrgentSlack) return {false, true};
      c.out.insert(c.out.end(), frame.begin(), frame.end());
      return {true, true};
    }
    const ssize_t n = ::send(c.fd, frame.data(), frame.size(), MSG_NOSIGNAL);
    std::size_t sent = 0;
    if (n >= 0) {
      sent = static_cast<std::size_t>(n);
    } else if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
      log::info("link ", link, " write failed: ", std::strerror(errno));
      c.broken = true;
      return {true, false};
    }
    if (sent == frame.size()) return {true, false};
    c.out.assign(frame.begin() + static_cast<std::ptrdiff_t>(sent), frame.end());
    c.out_pos = 0;
    return {true, true};
  }

  // ChannelHandler
  void on_channel_data(ChannelId ch, std::span<const std::uint8_t> bytes) override {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end() || it->second.dead) return;
    auto& t = it->second;
    compact(t.to_sock, t.to_pos);
    t.to_sock.insert(t.to_sock.end(), bytes.begin(), bytes.end());
    if (!t.connecting) flush_tunnel(ch, t);
  }

  void on_channel_writable(ChannelId ch) override { feed_bundle(ch); }

  void on_channel_closed(ChannelId ch) override {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end()) return;
    it->second.peer_closed = true;
    if (it->second.to_pos >= it->second.to_sock.size()) it->second.dead = true;
  }

 protected:
  TimePoint now() const {
    return TimePoint{std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - epoch_)};
  }

  virtual void add_own_fds(std::vector<pollfd>& pfds, std::vector<Tag>& tags) = 0;
  virtual void dispatch_own(const Tag& tag, short revents) = 0;
  virtual std::optional<TimePoint> own_deadline() const = 0;
  virtual void own_timers(TimePoint now) = 0;
  virtual void link_lost(LinkId link, TimePoint now) = 0;
  virtual void link_connected(LinkId, TimePoint) {}

  /// Drops all bundle state and starts over with a fresh core.
  void reset_bundle() {
    for (std::size_t i = 0; i < links_.size(); ++i) {
      auto& l = links_[i];
      if (l.fd >= 0) ::close(l.fd);
      l = LinkConn{};
    }
    for (auto& [id, t] : tunnels_)
      if (t.fd >= 0) ::close(t.fd);
    tunnels_.clear();
    core_ = std::make_unique<BundleCore>(config_, *this, *this, link_count_, now());
  }

  /// Runs `f`, turning protocol violations into a bundle reset.
  template <typename F>
  void guarded(F&& f) {
    try {
      f();
    } catch (const ProtocolError& e) {
      log::error("protocol error, resetting bundle: ", e.what());
      on_protocol_error();
    }
  }
  virtual void on_protocol_error() { reset_bundle(); }

  void adopt_link(LinkId id, int fd, FrameReader reader, std::optional<Duration> handshake) {
    auto& l = links_[id];
    l.fd = fd;
    l.connecting = false;
    l.broken = false;
    l.up = true;
    l.reader = std::move(reader);
    ++stats_scratch_.link_connects;
    log::info("link ", id, " up");
    core_->on_link_up(id, now(), handshake);
    read_frames(id);
  }

  /// Closes the link socket and tells the core.
  void drop_link(LinkId id) {
    auto& l = links_[id];
    if (l.fd < 0) return;
    ::close(l.fd);
    const bool was_up = l.up;
    l = LinkConn{};
    const TimePoint t = now();
    if (was_up) {
      log::info("link ", id, " down");
      core_->on_link_down(id, t);
    }
    link_lost(id, t);
  }

  Tunnel& add_tunnel(ChannelId ch, int fd, bool connecting) {
    Tunnel t;
    t.fd = fd;
    t.connecting = connecting;
    ++stats_scratch_.channels_opened;
    return tunnels_[ch] = std::move(t);
  }

  void abort_tunnel(ChannelId ch) {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end()) return;
    it->second.dead = true;
    core_->channel_close(ch, now());
  }

  std::map<ChannelId, Tunnel> tunnels_;
  std::unique_ptr<BundleCore> core_;
  std::vector<LinkConn> links_;
  BundleConfig config_;
  RuntimeStats stats_scratch_;

 private:
  static void compact(std::vector<std::uint8_t>& buf, std::size_t& pos) {
    if (pos == 0) return;
    buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(pos));
    pos = 0;
  }

  bool wants_read(const Tunnel& t) const {
    return !t.connecting && !t.local_eof && !t.peer_closed && t.from_pos >= t.from_sock.size();
  }

  int poll_timeout_ms() const {
    std::optional<TimePoint> d = core_ ? core_->next_wakeup() : std::nullopt;
    if (auto o = own_deadline()) d = d ? std::min(*d, *o) : *o;
    const TimePoint t = now();
    Duration wait = kMaxPollWait;
    if (d) wait = std::clamp(*d - t, Duration{0}, kMaxPollWait);
    return static_cast<int>((wait.count() + 999) / 1000);
  }

  void step_timers() {
    const TimePoint t = now();
    own_timers(t);
    if (!core_) return;
    if (auto w = core_->next_wakeup(); w && *w <= t) guarded([&] { core_->on_timer(t); });
  }

  /// Applies deferred teardown of links and tunnels.
  void settle() {
    for (std::size_t i = 0; i < links_.size(); ++i) {
      if (links_[i].broken) guarded([&] { drop_link(static_cast<LinkId>(i)); });
    }
    for (auto it = tunnels_.begin(); it != tunnels_.end();) {
      if (it->second.dead) {
        if (it->second.fd >= 0) ::close(it->second.fd);
        it = tunnels_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void dispatch(const Tag& tag, short revents) {
    switch (tag.kind) {
      case TagKind::Wake:
        wake_.drain();
        return;
      case TagKind::Link:
        on_link_event(static_cast<LinkId>(tag.index), revents);
        return;
      case TagKind::Tunnel:
        on_tunnel_event(static_cast<ChannelId>(tag.index), revents);
        return;
      default:
        dispatch_own(tag, revents);
    }
  }

  void on_link_event(LinkId id, short revents) {
    auto& l = links_[id];
    if (l.fd < 0) return;
    if (l.connecting) {
      if (!(revents & (POLLOUT | POLLERR | POLLHUP))) return;
      if (const int err = socket_error(l.fd); err != 0) {
        log::info("link ", id, " connect failed: ", std::strerror(err));
        drop_link(id);
        return;
      }
      l.connecting = false;
      link_connected(id, now());
      return;
    }
    if (revents & POLLOUT) {
      flush_link(id);
      if (l.fd >= 0 && !l.broken && l.pending() == 0 && l.up) core_->on_writable(id, now());
    }
    if (revents & (POLLIN | POLLHUP | POLLERR)) {
      std::uint8_t buf[kReadChunk];
      const ssize_t n = ::recv(l.fd, buf, sizeof buf, 0);
      if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
        drop_link(id);
        return;
      }
      if (n > 0) {
        l.reader.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
        read_frames(id);
      }
    }
  }

  void read_frames(LinkId id) {
    auto& l = links_[id];
    while (l.fd >= 0 && !l.broken) {
      auto r = l.reader.next();
      if (r.status == DecodeStatus::NeedMoreData) return;
      if (r.status == DecodeStatus::CodecError || std::holds_alternative<HelloFrame>(r.frame)) {
        log::warn("link ", id, " sent a bad frame: ", r.status == DecodeStatus::CodecError ? r.error : "HELLO");
        drop_link(id);
        return;
      }
      core_->on_frame(id, r.frame, now());
    }
  }

  void flush_link(LinkId id) {
    auto& l = links_[id];
    while (l.pending() > 0) {
      const ssize_t n = ::send(l.fd, l.out.data() + l.out_pos, l.pending(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return;
        l.broken = true;
        return;
      }
      l.out_pos += static_cast<std::size_t>(n);
    }
    l.out.clear();
    l.out_pos = 0;
  }

  void on_tunnel_event(ChannelId ch, short revents) {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end() || it->second.dead) return;
    auto& t = it->second;
    if (t.connecting) {
      if (!(revents & (POLLOUT | POLLERR | POLLHUP))) return;
      tunnel_connected(ch, socket_error(t.fd));
      return;
    }
    if (revents & POLLOUT) flush_tunnel(ch, t);
    if (t.dead) return;
    if (revents & (POLLIN | POLLHUP | POLLERR)) {
      if (!wants_read(t)) {
        if (revents & POLLERR) abort_tunnel(ch);
        return;
      }
      t.from_sock.resize(kReadChunk);
      const ssize_t n = ::recv(t.fd, t.from_sock.data(), t.from_sock.size(), 0);
      if (n < 0) {
        t.from_sock.clear();
        if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) abort_tunnel(ch);
        return;
      }
      t.from_sock.resize(static_cast<std::size_t>(n));
      t.from_pos = 0;
      if (n == 0) t.local_eof = true;
      feed_bundle(ch);
    }
  }

 protected:
  /// Server side: the target connect finished with `err`.
  virtual void tunnel_connected(ChannelId, int /*err*/) {}

  /// Offers bytes read from the local socket to the bundle.
  void feed_bundle(ChannelId ch) {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end() || it->second.dead) return;
    auto& t = it->second;
    while (t.from_pos < t.from_sock.size()) {
      const std::size_t before = t.from_pos;
      const std::size_t n = core_->channel_write(
          ch, std::span<const std::uint8_t>(t.from_sock).subspan(t.from_pos), now());
      // channel_write may re-enter through on_channel_writable.
      if (t.from_pos != before) continue;
      t.from_pos += n;
      if (n == 0) break;
    }
    if (t.from_pos < t.from_sock.size()) return;
    t.from_sock.clear();
    t.from_pos = 0;
    if (t.local_eof && !t.dead) {
      core_->channel_close(ch, now());
      t.dead = true;
    }
  }

  void flush_tunnel(ChannelId ch, Tunnel& t) {
    std::uint64_t written = 0;
    while (t.to_pos < t.to_sock.size()) {
      const ssize_t n = ::send(t.fd, t.to_sock.data() + t.to_pos, t.to_sock.size() - t.to_pos, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) break;
        abort_tunnel(ch);
        return;
      }
      t.to_pos += static_cast<std::size_t>(n);
      written += static_cast<std::uint64_t>(n);
    }
    if (t.to_pos >= t.to_sock.size()) {
      t.to_sock.clear();
      t.to_pos = 0;
      if (t.peer_closed) t.dead = true;
    }
    if (written > 0) core_->channel_consumed(ch, written, now());
  }

 private:
  void publish_stats() {
    RuntimeStats s = stats_scratch_;
    if (core_) {
      s.data_packets_sent = core_->stats().data_packets_sent;
      s.retransmissions = core_->stats().retransmissions;
      s.bytes_delivered = core_->stats().bytes_delivered;
    }
    s.links_up = 0;
    for (const auto& l : links_) s.links_up += l.up ? 1 : 0;
    std::lock_guard lock(stats_mu_);
    stats_ = s;
  }

  std::size_t link_count_;
  std::chrono::steady_clock::time_point epoch_;
  Wakeup wake_;
  std::atomic<bool> stop_{false};
  mutable std::mutex stats_mu_;
  RuntimeStats stats_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Server

class Server::Impl final : public Loop {
 public:
  explicit Impl(ServerOptions o) : Loop(o.bundle, kMaxLinks), opt_(std::move(o)) {}
  ~Impl() override {
    if (listener_ >= 0) ::close(listener_);
    for (auto& p : pending_) ::close(p.fd);
  }

  void start() {
    listener_ = make_listener(opt_.listen);
    log::info("listening on ", opt_.listen, " port ", bound_port(listener_));
  }
  std::uint16_t port() const { return listener_ >= 0 ? bound_port(listener_) : 0; }

  void on_open_request(ChannelId ch, const std::string& target) override {
    int fd = -1;
    bool done = false;
    try {
      const auto addrs = resolve(target, false);
      if (addrs.empty()) throw std::runtime_error("no address");
      std::tie(fd, done) = start_connect(addrs.front(), std::nullopt, 0, false);
    } catch (const std::exception& e) {
      log::info("channel ", ch, " target ", target, ": ", e.what());
      core_->open_result(ch, OpenCode::Unreachable, now());
      return;
    }
    add_tunnel(ch, fd, true);
    if (done) tunnel_connected(ch, 0);
  }

 protected:
  void add_own_fds(std::vector<pollfd>& pfds, std::vector<Tag>& tags) override {
    if (listener_ >= 0) {
      pfds.push_back({listener_, POLLIN, 0});
      tags.push_back({TagKind::Listener, 0});
    }
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      pfds.push_back({pending_[i].fd, POLLIN, 0});
      tags.push_back({TagKind::Pending, i});
    }
  }

  void dispatch_own(const Tag& tag, short) override {
    if (tag.kind == TagKind::Listener) {
      accept_all();
    } else if (tag.kind == TagKind::Pending && tag.index < pending_.size()) {
      read_hello(tag.index);
    }
  }

  std::optional<TimePoint> own_deadline() const override {
    std::optional<TimePoint> d;
    for (const auto& p : pending_) {
      const TimePoint t = p.since + kHelloTimeout;
      d = d ? std::min(*d, t) : t;
    }
    return d;
  }

  void own_timers(TimePoint t) override {
    std::erase_if(pending_, [&](Pending& p) {
      if (p.fd >= 0 && t - p.since < kHelloTimeout) return false;
      if (p.fd >= 0) ::close(p.fd);
      return true;
    });
  }

  void link_lost(LinkId, TimePoint) override {}

  void tunnel_connected(ChannelId ch, int err) override {
    auto it = tunnels_.find(ch);
    if (it == tunnels_.end()) return;
    auto& t = it->second;
    if (err != 0) {
      log::info("channel ", ch, " connect failed: ", std::strerror(err));
      ::close(t.fd);
      t.fd = -1;
      t.dead = true;
      core_->open_result(ch, err == ECONNREFUSED ? OpenCode::Refused : OpenCode::Unreachable, now());
      return;
    }
    t.connecting = false;
    core_->open_result(ch, OpenCode::Ok, now());
    if (!t.dead) flush_tunnel(ch, t);
  }

 private:
  struct Pending {
    int fd = -1;
    TimePoint since{};
    FrameReader reader;
  };

  void accept_all() {
    for (;;) {
      const int fd = ::accept4(listener_, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
      if (fd < 0) return;
      tune_link_socket(fd, opt_.sndbuf);
      pending_.push_back({fd, now(), {}});
    }
  }

  void read_hello(std::size_t index) {
    auto& p = pending_[index];
    std::uint8_t buf[4096];
    const ssize_t n = ::recv(p.fd, buf, sizeof buf, 0);
    if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
      ::close(p.fd);
      p.fd = -1;
      own_timers(now());
      return;
    }
    if (n < 0) return;
    p.reader.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
    auto r = p.reader.next();
    if (r.status == DecodeStatus::NeedMoreData) return;
    const auto* hello = std::get_if<HelloFrame>(&r.frame);
    std::string why;
    if (r.status == DecodeStatus::CodecError) why = r.error;
    else if (!hello) why = "first frame is not HELLO";
    else if (hello->token != opt_.token) why = "token mismatch";
    else if (hello->link_id >= kMaxLinks) why = "link id out of range";
    if (!why.empty()) {
      log::warn("rejecting connection: ", why);
      ::close(p.fd);
      p.fd = -1;
      own_timers(now());
      return;
    }
    const HelloFrame h = *hello;
    const int fd = p.fd;
    FrameReader reader = std::move(p.reader);
    pending_.erase(pending_.begin() + static_cast<std::ptrdiff_t>(index));

    if (!core_ || h.session != session_) {
      if (core_) log::info("new client session; resetting bundle");
      session_ = h.session;
      reset_bundle();
    }
    if (links_[h.link_id].fd >= 0) drop_link(h.link_id);
    adopt_link(h.link_id, fd, std::move(reader), std::nullopt);
  }

  ServerOptions opt_;
  int listener_ = -1;
  std::vector<Pending> pending_;
  std::uint64_t session_ = 0;
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
Server::~Server() = default;
void Server::start() { impl_->start(); }
std::uint16_t Server::port() const { return impl_->port(); }
void Server::run() { impl_->run(); }
void Server::stop() { impl_->stop(); }
RuntimeStats Server::stats() const { return impl_->stats(); }

// ---------------------------------------------------------------------------
// Client

class Client::Impl final : public Loop {
 public:
  explicit Impl(ClientOptions o)
      : Loop(o.bundle, o.links.size()), opt_(std::move(o)), slots_(opt_.links.size()) {
    if (opt_.links.empty()) throw std::invalid_argument("client needs at least one link");
    if (opt_.links.size() > kMaxLinks) throw std::invalid_argument("too many links");
    for (std::size_t i = 0; i < opt_.links.size(); ++i) {
      auto& s = slots_[i];
      s.server = opt_.links[i].server.empty() ? opt_.server : opt_.links[i].server;
      if (s.server.empty()) throw std::invalid_argument("link " + std::to_string(i) + " has no server address");
      split_host_port(s.server);
    }
    new_session();
  }
  ~Impl() override {
    for (int fd : listeners_) ::close(fd);
  }

  void start() {
    for (const auto& f : opt_.forwards) {
      split_host_port(f.target);
      listeners_.push_back(make_listener(f.listen));
      targets_.push_back(f.target);
      log::info("forwarding ", f.listen, " -> ", f.target);
    }
  }

  std::uint16_t forward_port(std::size_t i) const {
    return i < listeners_.size() ? bound_port(listeners_[i]) : 0;
  }

  void on_open_result(ChannelId ch, OpenCode code) override {
    if (code == OpenCode::Ok) return;
    log::info("channel ", ch, " refused by server (code ", static_cast<int>(code), ")");
    auto it = tunnels_.find(ch);
    if (it != tunnels_.end()) it->second.dead = true;
  }

 protected:
  void add_own_fds(std::vector<pollfd>& pfds, std::vector<Tag>& tags) override {
    for (std::size_t i = 0; i < listeners_.size(); ++i) {
      pfds.push_back({listeners_[i], POLLIN, 0});
      tags.push_back({TagKind::Listener, i});
    }
  }

  void dispatch_own(const Tag& tag, short) override {
    if (tag.kind != TagKind::Listener) return;
    for (;;) {
      const int fd = ::accept4(listeners_[tag.index], nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
      if (fd < 0) return;
      ChannelId ch = 0;
      try {
        ch = core_->open_channel(targets_[tag.index], now());
      } catch (const ProtocolError& e) {
        log::warn("cannot open channel: ", e.what());
        ::close(fd);
        continue;
      }
      add_tunnel(ch, fd, false);
    }
  }

  std::optional<TimePoint> own_deadline() const override {
    std::optional<TimePoint> d;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (links_[i].fd >= 0) continue;
      d = d ? std::min(*d, slots_[i].retry_at) : slots_[i].retry_at;
    }
    return d;
  }

  void own_timers(TimePoint t) override {
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (links_[i].fd < 0 && slots_[i].retry_at <= t) connect_link(static_cast<LinkId>(i), t);
    }
  }

  void link_lost(LinkId id, TimePoint t) override {
    auto& s = slots_[id];
    s.retry_at = t + s.backoff;
    s.backoff = std::min(kReconnectMax, s.backoff * 2);
  }

  void link_connected(LinkId id, TimePoint t) override {
    auto& l = links_[id];
    const Duration rtt = t - l.since;
    slots_[id].backoff = kReconnectMin;
    const int fd = l.fd;
    l.fd = -1;
    const auto hello = encode(HelloFrame{opt_.token, id, session_});
    // A fresh socket buffer always has room for the handshake.
    if (::send(fd, hello.data(), hello.size(), MSG_NOSIGNAL) != static_cast<ssize_t>(hello.size())) {
      ::close(fd);
      link_lost(id, t);
      return;
    }
    adopt_link(id, fd, FrameReader{}, rtt);
  }

  void on_protocol_error() override {
    new_session();
    const TimePoint t = now();
    for (auto& s : slots_) s.retry_at = t;
  }

 private:
  struct Slot {
    std::string server;
    TimePoint retry_at{};
    Duration backoff = kReconnectMin;
  };

  void new_session() {
    std::random_device rd;
    session_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    reset_bundle();
  }

  void connect_link(LinkId id, TimePoint t) {
    auto& s = slots_[id];
    auto& l = links_[id];
    try {
      const auto addrs = resolve(s.server, false);
      if (addrs.empty()) throw std::runtime_error("no address for " + s.server);
      const auto local = resolve_local(opt_.links[id].local, addrs.front().addr.ss_family);
      auto [fd, done] = start_connect(addrs.front(), local, opt_.sndbuf, true);
      l.fd = fd;
      l.connecting = true;
      l.since = t;
      if (done) {
        l.connecting = false;
        link_connected(id, t);
      }
    } catch (const std::exception& e) {
      log::info("link ", id, " connect: ", e.what());
      link_lost(id, t);
    }
  }

  ClientOptions opt_;
  std::vector<Slot> slots_;
  std::vector<int> listeners_;
  std::vector<std::string> targets_;
  std::uint64_t session_ = 0;
};

Client::Client(ClientOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
Client::~Client() = default;
void Client::start() { impl_->start(); }
std::uint16_t Client::forward_port(std::size_t i) const { return impl_->forward_port(i); }
void Client::run() { impl_->run(); }
void Client::stop() { impl_->stop(); }
RuntimeStats Client::stats() const { return impl_->stats(); }

}  // namespace linkweave::net
