/* linkweave: multi-link aggregation engine, C interface. */
#ifndef LINKWEAVE_H
#define LINKWEAVE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LW_API __attribute__((visibility("default")))
#else
#define LW_API
#endif

typedef enum lw_status {
  LW_OK = 0,
  LW_ERR_INVALID_ARGUMENT = 1,
  LW_ERR_PARSE = 2,
  LW_ERR_INVARIANT = 3,
  LW_ERR_IO = 4,
  LW_ERR_BIND = 5,
  LW_ERR_PROTOCOL = 6,
  LW_ERR_INTERNAL = 7
} lw_status;

typedef enum lw_scheduler { LW_SCHED_EDPF = 0, LW_SCHED_DUMB = 1 } lw_scheduler;

/* Message for the last failing call on this thread; never NULL. */
LW_API const char* lw_last_error(void);
LW_API const char* lw_version(void);

/* ---- Simulation ------------------------------------------------------- */

typedef struct lw_scenario lw_scenario;
typedef struct lw_sim_result lw_sim_result;

LW_API lw_status lw_scenario_load(const char* path, lw_scenario** out);
LW_API lw_status lw_scenario_parse(const char* text, lw_scenario** out);
/* Line of the last parse error on this thread, 0 if none. */
LW_API int lw_last_parse_line(void);
LW_API uint64_t lw_scenario_seed(const lw_scenario* scenario);
LW_API void lw_scenario_free(lw_scenario* scenario);

/* Runs the scenario. seed 0 keeps the scenario's own seed. On an invariant
 * violation the result is still produced and LW_ERR_INVARIANT returned. */
LW_API lw_status lw_simulate(const lw_scenario* scenario, lw_scheduler scheduler, uint64_t seed,
                             lw_sim_result** out);
LW_API void lw_sim_result_free(lw_sim_result* result);

typedef struct lw_summary {
  double goodput_bps;        /* bits per second over the whole run */
  double steady_goodput_bps; /* after the warm-up period */
  double p50_latency_ms;
  double p99_latency_ms;
  double first_byte_latency_ms;
  double retransmits;
  double bytes_delivered;
  size_t link_count;
} lw_summary;

LW_API lw_status lw_sim_summary(const lw_sim_result* result, lw_summary* out);
LW_API lw_status lw_sim_link_goodput(const lw_sim_result* result, size_t link, double* bps);
/* 1 when every byte was delivered intact, 0 otherwise. */
LW_API int lw_sim_complete(const lw_sim_result* result);
LW_API size_t lw_sim_trace_length(const lw_sim_result* result);

LW_API lw_status lw_sim_write_trace(const lw_sim_result* result, const char* path);
LW_API lw_status lw_sim_write_bandwidth(const lw_sim_result* result, const char* path);
/* Writes the mean of the runs' summaries. */
LW_API lw_status lw_sim_write_summary(const lw_sim_result* const* runs, size_t count,
                                      const char* path);

/* ---- Proxy over real TCP links ---------------------------------------- */

typedef struct lw_server lw_server;
typedef struct lw_client lw_client;

typedef struct lw_net_stats {
  uint64_t links_up;
  uint64_t link_connects;
  uint64_t data_packets_sent;
  uint64_t retransmissions;
  uint64_t bytes_delivered;
  uint64_t channels_opened;
} lw_net_stats;

/* listen is "addr:port"; token is 32 hex digits. */
LW_API lw_status lw_server_create(const char* listen, const char* token_hex, lw_server** out);
LW_API lw_status lw_server_set_sndbuf(lw_server* server, int bytes);
LW_API lw_status lw_server_start(lw_server* server);
LW_API uint16_t lw_server_port(const lw_server* server);
/* Blocks until lw_server_stop. */
LW_API lw_status lw_server_run(lw_server* server);
/* Safe from any thread or signal handler. */
LW_API void lw_server_stop(lw_server* server);
LW_API lw_status lw_server_stats(const lw_server* server, lw_net_stats* out);
LW_API void lw_server_free(lw_server* server);

LW_API lw_status lw_client_create(const char* server_addr, const char* token_hex, lw_client** out);
/* "LOCAL[=SERVER]": local interface or address to bind, optional server. */
LW_API lw_status lw_client_add_link(lw_client* client, const char* spec);
/* "LPORT:HOST:PORT" or "LADDR:LPORT:HOST:PORT". */
LW_API lw_status lw_client_add_forward(lw_client* client, const char* spec);
LW_API lw_status lw_client_set_sndbuf(lw_client* client, int bytes);
LW_API lw_status lw_client_start(lw_client* client);
LW_API uint16_t lw_client_forward_port(const lw_client* client, size_t index);
LW_API lw_status lw_client_run(lw_client* client);
LW_API void lw_client_stop(lw_client* client);
LW_API lw_status lw_client_stats(const lw_client* client, lw_net_stats* out);
LW_API void lw_client_free(lw_client* client);

#ifdef __cplusplus
}
#endif

#endif /* LINKWEAVE_H */
