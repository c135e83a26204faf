// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "core_pair.hpp"
#include "frame_gen.hpp"
#include "linkweave/codec.hpp"
#include "linkweave/linkweave.h"
#include "linkweave/scheduler.hpp"
#include "linkweave/simnet.hpp"
#include "loopback.hpp"
#include "support.hpp"

using namespace linkweave;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& what) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

sim::Scenario load(const char* name) { return sim::parse_scenario_file(test_support::scenario_path(name)); }

void aggregate_bandwidth_and_first_byte() {
  const auto sc = load("aggregate.scn");
  const auto t0 = Clock::now();
  const auto r = sim::run(sc);
  const double wall = since(t0);
  const double mbps = r.summary.steady_goodput_Bps * 8 / 1e6;
  report(1, !r.invariant_failure && std::abs(mbps - 1.1) <= 1.1 * 0.05 && wall < 5.0,
         fmt("aggregate steady goodput %.3f Mbps (target 1.1 +/- 5%%), wall %.2f s (< 5 s)", mbps, wall));
  const double fb = r.summary.first_byte_latency_ms;
  report(2, std::abs(fb - 420.0) <= 5.0, fmt("first byte after %.3f ms (target 420 +/- 5 ms)", fb));
}

void scheduler_equivalence() {
  std::mt19937_64 rng(20240601);
  const auto t0 = Clock::now();
  int mismatches = 0;
  const int instances = 10000;
  for (int i = 0; i < instances; ++i) {
    const std::size_t nlinks = 1 + rng() % 6;
    std::vector<LinkState> links;
    for (std::size_t l = 0; l < nlinks; ++l) {
      LinkState s = LinkState::fresh(static_cast<LinkId>(l), TimePoint{});
      s.characteristic.latency = std::chrono::milliseconds(1 + rng() % 1000);
      s.characteristic.bandwidth = 10000 + rng() % (10000000 - 10000 + 1);
      s.in_flight_bytes = static_cast<double>(rng() % 200000);
      links.push_back(s);
    }
    const std::size_t npk = 1 + rng() % 200;
    const std::vector<std::size_t> sizes(npk, 1 + rng() % kChunkSize);
    const auto a = schedule_naive(sizes, links);
    const auto b = schedule_heap(sizes, links);
    if (a.links != b.links || a.stalled != b.stalled) ++mismatches;
  }
  const double wall = since(t0);
  report(3, mismatches == 0 && wall < 30.0,
         fmt("%d random instances, %d heap/naive mismatches, wall %.2f s (< 30 s)", instances, mismatches, wall));
}

void edpf_vs_striping() {
  const auto sc = load("asymmetric.scn");
  sim::RunOptions edpf, rr;
  rr.scheduler = SchedulerKind::RoundRobin;
  const auto e = sim::run(sc, edpf);
  const auto d = sim::run(sc, rr);
  const bool ok = !e.invariant_failure && !d.invariant_failure &&
                  e.summary.p99_latency_ms < d.summary.p99_latency_ms &&
                  e.summary.goodput_Bps >= 0.95 * d.summary.goodput_Bps;
  report(4, ok,
         fmt("p99 %.1f ms vs %.1f ms round-robin; goodput %.2f vs %.2f Mbps (>= 95%%)", e.summary.p99_latency_ms,
             d.summary.p99_latency_ms, e.summary.goodput_Bps * 8 / 1e6, d.summary.goodput_Bps * 8 / 1e6));
}

void link_failure() {
  const auto sc = load("fast_link_death.scn");
  int intact = 0, bound_ok = 0;
  std::uint64_t violations = 0, max_held = 0;
  std::string first_problem;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    sim::RunOptions o;
    o.seed = seed;
    o.drain_limit = std::chrono::seconds(300);
    const auto r = sim::run(sc, o);
    const bool good = !r.invariant_failure && r.complete && r.stream_intact &&
                      r.app_bytes_received == r.app_bytes_written;
    intact += good;
    if (!good && first_problem.empty())
      first_problem = fmt(" (seed %llu: %s)", static_cast<unsigned long long>(seed),
                          r.invariant_failure ? r.invariant_failure->c_str() : "incomplete");
    bound_ok += r.reorder_bound_violations == 0 && !r.invariant_failure;
    violations += r.reorder_bound_violations;
    max_held = std::max(max_held, r.max_held_bytes);
  }
  report(5, intact == 50, fmt("%d/50 seeded runs delivered the exact stream after losing the fast link%s", intact,
                              first_problem.c_str()));
  report(6, bound_ok == 50,
         fmt("%llu reorder bound violations over 50 runs, max held %llu bytes",
             static_cast<unsigned long long>(violations), static_cast<unsigned long long>(max_held)));
}

void codec_fuzz() {
  std::mt19937_64 rng(777);
  std::uint64_t bad = 0;
  std::vector<std::uint8_t> bytes;
  for (int i = 0; i < 1000000; ++i) {
    const Frame f = test_support::random_frame(rng);
    bytes.clear();
    encode_into(f, bytes);
    const auto r = decode(bytes);
    if (r.status != DecodeStatus::Ok || r.consumed != bytes.size() || !(r.frame == f)) ++bad;
  }
  std::vector<Frame> corpus;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 100; ++i) {
    corpus.push_back(test_support::random_frame(rng));
    encode_into(corpus.back(), stream);
  }
  std::uint64_t split_bad = 0;
  auto drain = [](FrameReader& r, std::vector<Frame>& out) {
    for (;;) {
      auto d = r.next();
      if (d.status != DecodeStatus::Ok) return d.status == DecodeStatus::NeedMoreData;
      out.push_back(std::move(d.frame));
    }
  };
  {
    FrameReader r;
    std::vector<Frame> got;
    bool ok = true;
    for (auto b : stream) {
      r.feed(std::span(&b, 1));
      ok = drain(r, got) && ok;
    }
    if (!ok || got != corpus) ++split_bad;
  }
  for (std::size_t cut = 1; cut < stream.size(); ++cut) {
    FrameReader r;
    std::vector<Frame> got;
    r.feed(std::span(stream.data(), cut));
    bool ok = drain(r, got);
    r.feed(std::span(stream.data() + cut, stream.size() - cut));
    ok = drain(r, got) && ok;
    if (!ok || got != corpus) ++split_bad;
  }
  report(7, bad == 0 && split_bad == 0,
         fmt("10^6 fuzzed frames, %llu round-trip failures; %zu split points over 100 frames, %llu mismatches",
             static_cast<unsigned long long>(bad), stream.size(), static_cast<unsigned long long>(split_bad)));
}

std::string trace_bytes(const char* scenario, const fs::path& file) {
  lw_scenario* sc = nullptr;
  if (lw_scenario_load(test_support::scenario_path(scenario).c_str(), &sc) != LW_OK) return "load failed";
  lw_sim_result* r = nullptr;
  lw_simulate(sc, LW_SCHED_EDPF, 3, &r);
  std::string out = "no result";
  if (r && lw_sim_write_trace(r, file.c_str()) == LW_OK) {
    std::ifstream in(file, std::ios::binary);
    out.assign(std::istreambuf_iterator<char>(in), {});
  }
  lw_sim_result_free(r);
  lw_scenario_free(sc);
  return out;
}

void determinism() {
  const fs::path dir = fs::temp_directory_path() / "lw_acceptance";
  fs::create_directories(dir);
  bool ok = true;
  std::size_t total = 0;
  for (const char* name : {"aggregate.scn", "asymmetric.scn", "fast_link_death.scn"}) {
    const auto a = trace_bytes(name, dir / "a.csv");
    const auto b = trace_bytes(name, dir / "b.csv");
    ok = ok && a == b && a.size() > 1000;
    total += a.size();
  }
  fs::remove_all(dir);
  report(8, ok, fmt("three scenarios run twice with one seed, trace.csv identical (%zu bytes)", total));
}

void flow_control() {
  int passed = 0;
  const int runs = 200;
  std::string first;
  for (int seed = 1; seed <= runs; ++seed) {
    const auto err = test_support::run_channel_workload(static_cast<std::uint64_t>(seed) * 1000003);
    if (err.empty())
      ++passed;
    else if (first.empty())
      first = " (seed " + std::to_string(seed) + ": " + err + ")";
  }
  report(9, passed == runs,
         fmt("%d/%d randomized channel workloads delivered everything within their windows%s", passed, runs,
             first.c_str()));
}

void loopback() {
  const auto r = test_support::run_loopback(100ull << 20, true, 60.0);
  const bool ok = r.error.empty() && r.link_killed && r.sent == (100ull << 20) && r.received == r.sent &&
                  r.received_crc == r.sent_crc && r.seconds < 60.0;
  report(10, ok,
         fmt("100 MB over two localhost links with one killed: %llu bytes received, crc %08x vs %08x, %.1f s%s%s",
             static_cast<unsigned long long>(r.received), r.received_crc, r.sent_crc, r.seconds,
             r.error.empty() ? "" : ", ", r.error.c_str()));
}

}  // namespace

int main() {
  aggregate_bandwidth_and_first_byte();
  scheduler_equivalence();
  edpf_vs_striping();
  link_failure();
  codec_fuzz();
  determinism();
  flow_control();
  loopback();
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
