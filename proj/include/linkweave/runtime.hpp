#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "linkweave/bundle.hpp"
#include "linkweave/codec.hpp"

namespace linkweave::net {

inline constexpr std::uint16_t kDefaultPort = 9330;
inline constexpr std::size_t kMaxLinks = 16;
inline constexpr Duration kReconnectMin = 250ms;
inline constexpr Duration kReconnectMax = 10s;

/// Parses 32 hex digits.
BundleToken parse_token(const std::string& hex);

/// One client link: optional local interface name or address to bind, and
/// the server it connects to (empty means the client default).
struct LinkSpec {
  std::string local;
  std::string server;
};

/// "LOCAL[=SERVER]".
LinkSpec parse_link_spec(const std::string& text);

struct ForwardRule {
  std::string listen;  ///< "addr:port"
  std::string target;  ///< "host:port" as seen from the server
};

/// "LPORT:HOST:PORT" or "LADDR:LPORT:HOST:PORT"; the short form listens on
/// 127.0.0.1.
ForwardRule parse_forward(const std::string& text);

struct RuntimeStats {
  std::uint64_t links_up = 0;
  std::uint64_t link_connects = 0;
  std::uint64_t data_packets_sent = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t bytes_delivered = 0;
  std::uint64_t channels_opened = 0;
};

struct ServerOptions {
  std::string listen = "0.0.0.0:9330";
  BundleToken token{};
  int sndbuf = 0;  ///< SO_SNDBUF for link sockets; 0 keeps the OS default
  BundleConfig bundle;
};

struct ClientOptions {
  std::string server;
  BundleToken token{};
  std::vector<LinkSpec> links;
  std::vector<ForwardRule> forwards;
  int sndbuf = 0;
  BundleConfig bundle;
};

/// Proxy server: accepts bundle links and terminates tunneled channels by
/// connecting to their targets. Single-threaded; run() blocks.
class Server {
 public:
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listener. Throws std::system_error on failure.
  void start();
  std::uint16_t port() const;
  void run();
  /// Safe from other threads and signal handlers.
  void stop();
  RuntimeStats stats() const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

/// Proxy client: keeps every link connected and tunnels local listeners
/// through the bundle.
class Client {
 public:
  explicit Client(ClientOptions options);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void start();
  /// Bound port of forwarding rule `index`.
  std::uint16_t forward_port(std::size_t index) const;
  void run();
  void stop();
  RuntimeStats stats() const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace linkweave::net
