// Command-line front end. Talks to the library only through linkweave.h.
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "linkweave/linkweave.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitParse = 1;
constexpr int kExitInvariant = 2;
constexpr int kExitStartup = 3;

lw_server* g_server = nullptr;
lw_client* g_client = nullptr;

void on_signal(int) {
  if (g_server) lw_server_stop(g_server);
  if (g_client) lw_client_stop(g_client);
}

void install_signals() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

struct SimulateArgs {
  std::string scenario;
  int repeat = 0;
  std::string scheduler = "edpf";
  std::string out = ".";
};

bool write_outputs(const lw_sim_result* r, const fs::path& dir) {
  fs::create_directories(dir);
  if (lw_sim_write_trace(r, (dir / "trace.csv").c_str()) != LW_OK ||
      lw_sim_write_bandwidth(r, (dir / "bandwidth.csv").c_str()) != LW_OK) {
    std::cerr << "error: " << lw_last_error() << '\n';
    return false;
  }
  return true;
}

int cmd_simulate(const SimulateArgs& a) {
  lw_scenario* sc = nullptr;
  if (lw_scenario_load(a.scenario.c_str(), &sc) != LW_OK) {
    std::cerr << a.scenario << ": " << lw_last_error() << '\n';
    return kExitParse;
  }
  const lw_scheduler sched = a.scheduler == "dumb" ? LW_SCHED_DUMB : LW_SCHED_EDPF;
  const fs::path out(a.out);

  std::vector<uint64_t> seeds;
  if (a.repeat > 0) {
    for (int i = 1; i <= a.repeat; ++i) seeds.push_back(static_cast<uint64_t>(i));
  } else {
    seeds.push_back(lw_scenario_seed(sc));
  }

  std::vector<lw_sim_result*> runs;
  int rc = 0;
  for (uint64_t seed : seeds) {
    lw_sim_result* r = nullptr;
    const lw_status st = lw_simulate(sc, sched, seed, &r);
    if (st == LW_ERR_INVARIANT) {
      std::cerr << "invariant violated (seed " << seed << "): " << lw_last_error() << '\n';
      rc = kExitInvariant;
    } else if (st != LW_OK) {
      std::cerr << "simulation failed: " << lw_last_error() << '\n';
      rc = kExitStartup;
    }
    if (!r) break;
    runs.push_back(r);
    const fs::path dir = a.repeat > 0 ? out / ("run-" + std::to_string(seed)) : out;
    if (!write_outputs(r, dir)) rc = rc ? rc : kExitStartup;
    if (!lw_sim_complete(r)) std::cerr << "warning: seed " << seed << " ended before every byte was delivered\n";
    if (rc) break;
  }

  if (!runs.empty()) {
    fs::create_directories(out);
    const fs::path summary = out / "summary.txt";
    if (lw_sim_write_summary(runs.data(), runs.size(), summary.c_str()) != LW_OK) {
      std::cerr << "error: " << lw_last_error() << '\n';
      rc = rc ? rc : kExitStartup;
    } else {
      std::FILE* f = std::fopen(summary.c_str(), "r");
      char buf[256];
      while (f && std::fgets(buf, sizeof buf, f)) std::fputs(buf, stdout);
      if (f) std::fclose(f);
    }
  }
  for (auto* r : runs) lw_sim_result_free(r);
  lw_scenario_free(sc);
  return rc;
}

int cmd_server(const std::string& listen, const std::string& token, int sndbuf) {
  lw_server* s = nullptr;
  if (lw_server_create(listen.c_str(), token.c_str(), &s) != LW_OK ||
      lw_server_set_sndbuf(s, sndbuf) != LW_OK || lw_server_start(s) != LW_OK) {
    std::cerr << "server: " << lw_last_error() << '\n';
    lw_server_free(s);
    return kExitStartup;
  }
  g_server = s;
  install_signals();
  const lw_status st = lw_server_run(s);
  if (st != LW_OK) std::cerr << "server: " << lw_last_error() << '\n';
  g_server = nullptr;
  lw_server_free(s);
  return 0;
}

int cmd_client(const std::string& server, const std::string& token, const std::vector<std::string>& links,
               const std::vector<std::string>& forwards, int sndbuf) {
  lw_client* c = nullptr;
  auto bail = [&] {
    std::cerr << "client: " << lw_last_error() << '\n';
    lw_client_free(c);
    return kExitStartup;
  };
  if (lw_client_create(server.empty() ? nullptr : server.c_str(), token.c_str(), &c) != LW_OK) return bail();
  for (const auto& l : links)
    if (lw_client_add_link(c, l.c_str()) != LW_OK) return bail();
  for (const auto& f : forwards)
    if (lw_client_add_forward(c, f.c_str()) != LW_OK) return bail();
  if (lw_client_set_sndbuf(c, sndbuf) != LW_OK || lw_client_start(c) != LW_OK) return bail();
  for (size_t i = 0; i < forwards.size(); ++i)
    std::cerr << "forward " << forwards[i] << " listening on port " << lw_client_forward_port(c, i) << '\n';
  g_client = c;
  install_signals();
  const lw_status st = lw_client_run(c);
  if (st != LW_OK) std::cerr << "client: " << lw_last_error() << '\n';
  g_client = nullptr;
  lw_client_free(c);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linkweave: aggregate several links into one reliable stream"};
  app.set_version_flag("--version", std::string(lw_version()));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario in the network simulator");
  simulate->add_option("scenario", sim.scenario, "Scenario file")->required();
  simulate->add_option("--repeat", sim.repeat, "Run with seeds 1..N and average")->check(CLI::PositiveNumber);
  simulate->add_option("--scheduler", sim.scheduler, "edpf or dumb (round-robin)")
      ->check(CLI::IsMember({"edpf", "dumb"}));
  simulate->add_option("--out", sim.out, "Output directory");

  std::string listen = "0.0.0.0:9330";
  std::string server_token;
  int server_sndbuf = 0;
  auto* server = app.add_subcommand("server", "Accept bundle links and forward channels");
  server->add_option("--listen", listen, "Listen address host:port")->capture_default_str();
  server->add_option("--token", server_token, "Bundle token, 32 hex digits")->required();
  server->add_option("--sndbuf", server_sndbuf, "Link socket send buffer in bytes");

  std::string server_addr, client_token;
  std::vector<std::string> links, forwards;
  int client_sndbuf = 0;
  auto* client = app.add_subcommand("client", "Connect links and tunnel local ports");
  client->add_option("--server", server_addr, "Default server address host:port");
  client->add_option("--token", client_token, "Bundle token, 32 hex digits")->required();
  client->add_option("--link", links, "LOCAL[=SERVER] per link; LOCAL is an interface, address or 'any'")
      ->required();
  client->add_option("--forward", forwards, "[LADDR:]LPORT:HOST:PORT");
  client->add_option("--sndbuf", client_sndbuf, "Link socket send buffer in bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*simulate) return cmd_simulate(sim);
  if (*server) return cmd_server(listen, server_token, server_sndbuf);
  return cmd_client(server_addr, client_token, links, forwards, client_sndbuf);
}
