#include "loopback.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>
#include <zlib.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

#include "linkweave/linkweave.h"

namespace test_support {

namespace {

using Clock = std::chrono::steady_clock;

int listen_any(std::uint16_t& port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0 || ::listen(fd, 16) != 0) {
    ::close(fd);
    return -1;
  }
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  port = ntohs(a.sin_port);
  return fd;
}

int connect_local(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  a.sin_port = htons(port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

/// Byte-for-byte TCP relay that can drop every connection it carries.
class Relay {
 public:
  explicit Relay(std::uint16_t upstream) : upstream_(upstream) { listen_fd_ = listen_any(port_); }
  ~Relay() {
    stop_ = true;
    if (thread_.joinable()) thread_.join();
    for (auto& p : pairs_) {
      ::close(p.a);
      ::close(p.b);
    }
    ::close(listen_fd_);
  }
  std::uint16_t port() const { return port_; }
  void start() { thread_ = std::thread([this] { loop(); }); }
  void kill() { kill_ = true; }
  bool killed_any() const { return killed_any_; }

 private:
  struct Pair {
    int a, b;
  };

  void loop() {
    std::vector<char> buf(65536);
    while (!stop_) {
      if (kill_.exchange(false)) {
        for (auto& p : pairs_) {
          ::close(p.a);
          ::close(p.b);
          killed_any_ = true;
        }
        pairs_.clear();
      }
      std::vector<pollfd> fds{{listen_fd_, POLLIN, 0}};
      for (auto& p : pairs_) {
        fds.push_back({p.a, POLLIN, 0});
        fds.push_back({p.b, POLLIN, 0});
      }
      if (::poll(fds.data(), fds.size(), 20) <= 0) continue;
      if (fds[0].revents & POLLIN) {
        const int c = ::accept(listen_fd_, nullptr, nullptr);
        if (c >= 0) {
          const int u = connect_local(upstream_);
          if (u < 0)
            ::close(c);
          else
            pairs_.push_back({c, u});
        }
      }
      std::vector<Pair> alive;
      for (std::size_t i = 0; i < pairs_.size(); ++i) {
        auto& p = pairs_[i];
        bool ok = true;
        for (int dir = 0; dir < 2 && ok; ++dir) {
          if (!(fds[1 + 2 * i + static_cast<std::size_t>(dir)].revents & (POLLIN | POLLHUP | POLLERR))) continue;
          const int from = dir == 0 ? p.a : p.b, to = dir == 0 ? p.b : p.a;
          const ssize_t n = ::recv(from, buf.data(), buf.size(), 0);
          if (n <= 0) {
            ok = false;
            break;
          }
          // Blocking send keeps the relay simple; backpressure stalls both directions briefly.
          for (ssize_t off = 0; off < n;) {
            const ssize_t w = ::send(to, buf.data() + off, static_cast<std::size_t>(n - off), MSG_NOSIGNAL);
            if (w <= 0) {
              ok = false;
              break;
            }
            off += w;
          }
        }
        if (ok) {
          alive.push_back(p);
        } else {
          ::close(p.a);
          ::close(p.b);
        }
      }
      pairs_ = std::move(alive);
    }
  }

  std::uint16_t upstream_;
  std::uint16_t port_ = 0;
  int listen_fd_ = -1;
  std::vector<Pair> pairs_;
  std::thread thread_;
  std::atomic<bool> stop_{false}, kill_{false}, killed_any_{false};
};

std::uint8_t stream_byte(std::uint64_t i) {
  std::uint64_t x = (i / 8 + 1) * 0x9E3779B97F4A7C15ull;
  x ^= x >> 29;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 32;
  return static_cast<std::uint8_t>(x >> (8 * (i % 8)));
}

const char* kToken = "00112233445566778899aabbccddeeff";

}  // namespace

LoopbackResult run_loopback(std::uint64_t bytes, bool kill_link, double timeout_s) {
  LoopbackResult res;
  const auto t0 = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  // Sink: accepts one connection and checksums everything until EOF.
  std::uint16_t sink_port = 0;
  const int sink_fd = listen_any(sink_port);
  if (sink_fd < 0) return {.error = "sink bind failed"};
  std::atomic<bool> sink_done{false};
  std::thread sink([&] {
    pollfd p{sink_fd, POLLIN, 0};
    while (::poll(&p, 1, 100) == 0)
      if (elapsed() > timeout_s) return;
    const int c = ::accept(sink_fd, nullptr, nullptr);
    if (c < 0) return;
    std::vector<unsigned char> buf(1 << 16);
    uLong crc = crc32(0L, Z_NULL, 0);
    for (;;) {
      pollfd q{c, POLLIN, 0};
      if (::poll(&q, 1, 100) == 0) {
        if (elapsed() > timeout_s) break;
        continue;
      }
      const ssize_t n = ::recv(c, buf.data(), buf.size(), 0);
      if (n <= 0) break;
      crc = crc32(crc, buf.data(), static_cast<uInt>(n));
      res.received += static_cast<std::uint64_t>(n);
    }
    res.received_crc = static_cast<std::uint32_t>(crc);
    ::close(c);
    sink_done = true;
  });

  lw_server* server = nullptr;
  lw_client* client = nullptr;
  std::thread server_thread, client_thread;
  std::unique_ptr<Relay> relay;
  auto fail = [&](std::string why) {
    res.error = std::move(why) + ": " + lw_last_error();
  };

  if (lw_server_create("127.0.0.1:0", kToken, &server) != LW_OK || lw_server_start(server) != LW_OK) {
    fail("server start");
  } else {
    server_thread = std::thread([&] { lw_server_run(server); });
    const std::uint16_t sport = lw_server_port(server);
    relay = std::make_unique<Relay>(sport);
    relay->start();
    const std::string direct = "127.0.0.1=127.0.0.1:" + std::to_string(sport);
    const std::string relayed = "127.0.0.1=127.0.0.1:" + std::to_string(relay->port());
    const std::string fwd = "0:127.0.0.1:" + std::to_string(sink_port);
    if (lw_client_create(nullptr, kToken, &client) != LW_OK || lw_client_add_link(client, direct.c_str()) != LW_OK ||
        lw_client_add_link(client, relayed.c_str()) != LW_OK || lw_client_add_forward(client, fwd.c_str()) != LW_OK ||
        lw_client_start(client) != LW_OK) {
      fail("client start");
    } else {
      client_thread = std::thread([&] { lw_client_run(client); });
    }
  }

  if (res.error.empty()) {
    // Wait for both links.
    lw_net_stats st{};
    while (elapsed() < timeout_s && (lw_client_stats(client, &st), st.links_up < 2))
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    const int app = st.links_up < 2 ? -1 : connect_local(lw_client_forward_port(client, 0));
    if (app < 0) {
      res.error = "links did not come up";
    } else {
      std::vector<unsigned char> buf(1 << 16);
      uLong crc = crc32(0L, Z_NULL, 0);
      while (res.sent < bytes && elapsed() < timeout_s) {
        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), bytes - res.sent));
        for (std::size_t i = 0; i < n; ++i) buf[i] = stream_byte(res.sent + i);
        std::size_t off = 0;
        while (off < n) {
          const ssize_t w = ::send(app, buf.data() + off, n - off, MSG_NOSIGNAL);
          if (w <= 0) break;
          off += static_cast<std::size_t>(w);
        }
        if (off < n) {
          res.error = "application write failed";
          break;
        }
        crc = crc32(crc, buf.data(), static_cast<uInt>(n));
        const bool half = res.sent < bytes / 2 && res.sent + n >= bytes / 2;
        res.sent += n;
        if (kill_link && half) relay->kill();
      }
      res.sent_crc = static_cast<std::uint32_t>(crc);
      ::shutdown(app, SHUT_WR);
      while (!sink_done && elapsed() < timeout_s) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      ::close(app);
      if (res.error.empty() && !sink_done) res.error = "timed out";
    }
  }

  if (client) lw_client_stop(client);
  if (server) lw_server_stop(server);
  if (client_thread.joinable()) client_thread.join();
  if (server_thread.joinable()) server_thread.join();
  sink.join();
  res.link_killed = relay && relay->killed_any();
  relay.reset();
  lw_client_free(client);
  lw_server_free(server);
  ::close(sink_fd);
  res.seconds = elapsed();
  return res;
}

}  // namespace test_support
