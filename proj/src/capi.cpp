#include "linkweave/linkweave.h"

#include <fstream>
#include <memory>
#include <new>
#include <string>
#include <system_error>

#include "linkweave/errors.hpp"
#include "linkweave/metrics.hpp"
#include "linkweave/runtime.hpp"
#include "linkweave/simnet.hpp"

using namespace linkweave;

struct lw_scenario {
  sim::Scenario scenario;
};

struct lw_sim_result {
  sim::RunResult result;
};

struct lw_server {
  net::ServerOptions options;
  std::unique_ptr<net::Server> server;
};

struct lw_client {
  net::ClientOptions options;
  std::unique_ptr<net::Client> client;
};

namespace {

thread_local std::string g_error;
thread_local int g_parse_line = 0;

lw_status fail(lw_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

/// Maps exceptions escaping `f` to status codes.
template <typename F>
lw_status translate(F&& f) {
  try {
    g_error.clear();
    return f();
  } catch (const ParseError& e) {
    g_parse_line = e.line();
    return fail(LW_ERR_PARSE, e.what());
  } catch (const InvariantViolation& e) {
    return fail(LW_ERR_INVARIANT, e.what());
  } catch (const ProtocolError& e) {
    return fail(LW_ERR_PROTOCOL, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(LW_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::system_error& e) {
    return fail(LW_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LW_ERR_INTERNAL, e.what());
  }
}

lw_status write_file(const char* path, const auto& writer) {
  if (!path) return fail(LW_ERR_INVALID_ARGUMENT, "null path");
  std::ofstream out(path, std::ios::binary);
  if (!out) return fail(LW_ERR_IO, std::string("cannot open ") + path);
  writer(out);
  out.flush();
  if (!out) return fail(LW_ERR_IO, std::string("write failed: ") + path);
  return LW_OK;
}

lw_net_stats to_c(const net::RuntimeStats& s) {
  return {s.links_up, s.link_connects, s.data_packets_sent, s.retransmissions, s.bytes_delivered,
          s.channels_opened};
}

}  // namespace

extern "C" {

const char* lw_last_error(void) { return g_error.c_str(); }
const char* lw_version(void) { return "0.1.0"; }
int lw_last_parse_line(void) { return g_parse_line; }

lw_status lw_scenario_load(const char* path, lw_scenario** out) {
  if (!path || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  g_parse_line = 0;
  return translate([&] {
    *out = new lw_scenario{sim::parse_scenario_file(path)};
    return LW_OK;
  });
}

lw_status lw_scenario_parse(const char* text, lw_scenario** out) {
  if (!text || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  g_parse_line = 0;
  return translate([&] {
    *out = new lw_scenario{sim::parse_scenario_text(text)};
    return LW_OK;
  });
}

uint64_t lw_scenario_seed(const lw_scenario* s) { return s ? s->scenario.seed : 0; }
void lw_scenario_free(lw_scenario* s) { delete s; }

lw_status lw_simulate(const lw_scenario* scenario, lw_scheduler scheduler, uint64_t seed,
                      lw_sim_result** out) {
  if (!scenario || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  if (scheduler != LW_SCHED_EDPF && scheduler != LW_SCHED_DUMB)
    return fail(LW_ERR_INVALID_ARGUMENT, "unknown scheduler");
  return translate([&] {
    sim::RunOptions opt;
    opt.scheduler = scheduler == LW_SCHED_DUMB ? SchedulerKind::RoundRobin : SchedulerKind::Edpf;
    if (seed != 0) opt.seed = seed;
    auto* r = new lw_sim_result{sim::run(scenario->scenario, opt)};
    *out = r;
    if (r->result.invariant_failure) return fail(LW_ERR_INVARIANT, *r->result.invariant_failure);
    return LW_OK;
  });
}

void lw_sim_result_free(lw_sim_result* r) { delete r; }

lw_status lw_sim_summary(const lw_sim_result* r, lw_summary* out) {
  if (!r || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  const auto& s = r->result.summary;
  *out = {s.goodput_Bps * 8, s.steady_goodput_Bps * 8, s.p50_latency_ms, s.p99_latency_ms,
          s.first_byte_latency_ms, s.retransmits, s.bytes_delivered, s.link_goodput_Bps.size()};
  return LW_OK;
}

lw_status lw_sim_link_goodput(const lw_sim_result* r, size_t link, double* bps) {
  if (!r || !bps) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  const auto& v = r->result.summary.link_goodput_Bps;
  if (link >= v.size()) return fail(LW_ERR_INVALID_ARGUMENT, "link out of range");
  *bps = v[link] * 8;
  return LW_OK;
}

int lw_sim_complete(const lw_sim_result* r) {
  return r && r->result.complete && r->result.stream_intact ? 1 : 0;
}

size_t lw_sim_trace_length(const lw_sim_result* r) { return r ? r->result.trace.size() : 0; }

lw_status lw_sim_write_trace(const lw_sim_result* r, const char* path) {
  if (!r) return fail(LW_ERR_INVALID_ARGUMENT, "null result");
  return translate([&] {
    return write_file(path, [&](std::ostream& o) { metrics::write_trace_csv(o, r->result.trace); });
  });
}

lw_status lw_sim_write_bandwidth(const lw_sim_result* r, const char* path) {
  if (!r) return fail(LW_ERR_INVALID_ARGUMENT, "null result");
  return translate([&] {
    return write_file(path, [&](std::ostream& o) { metrics::write_bandwidth_csv(o, r->result.trace); });
  });
}

lw_status lw_sim_write_summary(const lw_sim_result* const* runs, size_t count, const char* path) {
  if (!runs || count == 0) return fail(LW_ERR_INVALID_ARGUMENT, "no runs");
  return translate([&] {
    std::vector<metrics::Summary> all;
    for (size_t i = 0; i < count; ++i) {
      if (!runs[i]) return fail(LW_ERR_INVALID_ARGUMENT, "null run");
      all.push_back(runs[i]->result.summary);
    }
    const auto mean = metrics::average(all);
    return write_file(path, [&](std::ostream& o) {
      o << "runs " << count << '\n';
      metrics::write_summary(o, mean);
    });
  });
}

// ---- Server

lw_status lw_server_create(const char* listen, const char* token_hex, lw_server** out) {
  if (!listen || !token_hex || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  return translate([&] {
    auto s = std::make_unique<lw_server>();
    s->options.listen = listen;
    s->options.token = net::parse_token(token_hex);
    *out = s.release();
    return LW_OK;
  });
}

lw_status lw_server_set_sndbuf(lw_server* s, int bytes) {
  if (!s || bytes < 0) return fail(LW_ERR_INVALID_ARGUMENT, "bad argument");
  if (s->server) return fail(LW_ERR_INVALID_ARGUMENT, "server already started");
  s->options.sndbuf = bytes;
  return LW_OK;
}

lw_status lw_server_start(lw_server* s) {
  if (!s) return fail(LW_ERR_INVALID_ARGUMENT, "null server");
  if (s->server) return fail(LW_ERR_INVALID_ARGUMENT, "server already started");
  return translate([&] {
    auto srv = std::make_unique<net::Server>(s->options);
    try {
      srv->start();
    } catch (const std::system_error& e) {
      return fail(LW_ERR_BIND, e.what());
    }
    s->server = std::move(srv);
    return LW_OK;
  });
}

uint16_t lw_server_port(const lw_server* s) { return s && s->server ? s->server->port() : 0; }

lw_status lw_server_run(lw_server* s) {
  if (!s || !s->server) return fail(LW_ERR_INVALID_ARGUMENT, "server not started");
  return translate([&] {
    s->server->run();
    return LW_OK;
  });
}

void lw_server_stop(lw_server* s) {
  if (s && s->server) s->server->stop();
}

lw_status lw_server_stats(const lw_server* s, lw_net_stats* out) {
  if (!s || !s->server || !out) return fail(LW_ERR_INVALID_ARGUMENT, "server not started");
  *out = to_c(s->server->stats());
  return LW_OK;
}

void lw_server_free(lw_server* s) { delete s; }

// ---- Client

lw_status lw_client_create(const char* server_addr, const char* token_hex, lw_client** out) {
  if (!token_hex || !out) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  return translate([&] {
    auto c = std::make_unique<lw_client>();
    if (server_addr) c->options.server = server_addr;
    c->options.token = net::parse_token(token_hex);
    *out = c.release();
    return LW_OK;
  });
}

lw_status lw_client_add_link(lw_client* c, const char* spec) {
  if (!c || !spec) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  if (c->client) return fail(LW_ERR_INVALID_ARGUMENT, "client already started");
  return translate([&] {
    c->options.links.push_back(net::parse_link_spec(spec));
    return LW_OK;
  });
}

lw_status lw_client_add_forward(lw_client* c, const char* spec) {
  if (!c || !spec) return fail(LW_ERR_INVALID_ARGUMENT, "null argument");
  if (c->client) return fail(LW_ERR_INVALID_ARGUMENT, "client already started");
  return translate([&] {
    c->options.forwards.push_back(net::parse_forward(spec));
    return LW_OK;
  });
}

lw_status lw_client_set_sndbuf(lw_client* c, int bytes) {
  if (!c || bytes < 0) return fail(LW_ERR_INVALID_ARGUMENT, "bad argument");
  if (c->client) return fail(LW_ERR_INVALID_ARGUMENT, "client already started");
  c->options.sndbuf = bytes;
  return LW_OK;
}

lw_status lw_client_start(lw_client* c) {
  if (!c) return fail(LW_ERR_INVALID_ARGUMENT, "null client");
  if (c->client) return fail(LW_ERR_INVALID_ARGUMENT, "client already started");
  return translate([&] {
    auto cl = std::make_unique<net::Client>(c->options);
    try {
      cl->start();
    } catch (const std::system_error& e) {
      return fail(LW_ERR_BIND, e.what());
    }
    c->client = std::move(cl);
    return LW_OK;
  });
}

uint16_t lw_client_forward_port(const lw_client* c, size_t index) {
  return c && c->client ? c->client->forward_port(index) : 0;
}

lw_status lw_client_run(lw_client* c) {
  if (!c || !c->client) return fail(LW_ERR_INVALID_ARGUMENT, "client not started");
  return translate([&] {
    c->client->run();
    return LW_OK;
  });
}

void lw_client_stop(lw_client* c) {
  if (c && c->client) c->client->stop();
}

lw_status lw_client_stats(const lw_client* c, lw_net_stats* out) {
  if (!c || !c->client || !out) return fail(LW_ERR_INVALID_ARGUMENT, "client not started");
  *out = to_c(c->client->stats());
  return LW_OK;
}

void lw_client_free(lw_client* c) { delete c; }

}  // extern "C"
