#pragma once

#include "streamtx/oracle.hpp"
#include "streamtx/runtime.hpp"
#include "streamtx/workloads.hpp"

namespace streamtx {
namespace harness {

struct RunConfig {
  std::string workload = "sl";         // sl|gs|gs-window|gs-nondet|tp|dynamic:<script>
  workloads::WorkloadKnobs knobs;
  std::size_t threads = 1;
  std::string strategy = "auto";       // auto | {S|NS}/{F|C}/{E|L} | nested:<file>
  ExploreVariant variant = ExploreVariant::DFS;
  SpeculationMode speculation = SpeculationMode::Auto;
  DecisionThresholds thresholds;
  std::uint64_t batches = 1;           // run duration in punctuation intervals
  bool verify = false;
  bool collect_breakdown = true;
  std::uint64_t shuffle_window = 0;
  std::string events_in;               // run events from a CSV file
  std::string events_out;              // dump the generated events
};

struct BatchRow {
  std::uint64_t batch = 0;
  std::size_t events = 0;
  double throughput = 0.0;  // events per second
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;
  double useful_s = 0.0, sync_s = 0.0, lock_s = 0.0, construct_s = 0.0, explore_s = 0.0,
         abort_s = 0.0;
  std::string decision;
};

struct Metrics {
  double throughput = 0.0;
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;
  double useful_s = 0.0, sync_s = 0.0, lock_s = 0.0, construct_s = 0.0, explore_s = 0.0,
         abort_s = 0.0;
  std::uint64_t memory_peak_kb = 0;
  std::vector<BatchRow> rows;
  std::vector<std::string> decision_trace;
};

struct VerifyReport {
  bool pass = true;
  std::vector<std::string> diffs;  // first 20 divergences

  std::string str() const;
};

struct BenchResult {
  Metrics metrics;
  VerifyReport verify_report;
  bool verified = false;
  RunResult run;
};

/// Byte-wise comparison of final state, committed transaction set and
/// failed-marker placement between engine and oracle.
VerifyReport verify(const RunResult& engine, const OracleResult& oracle);

/// Parses `{auto|S|NS}/{F|C}/{E|L}` into a forced decision; returns
/// nullopt for "auto".
std::optional<SchedulingDecision> parse_strategy(const std::string& spec, ExploreVariant variant);

/// Parses a nested-strategy file: one `group=G explore=... gran=... abort=...`
/// line per group.
std::map<GroupTag, SchedulingDecision> parse_nested_file(const std::string& text,
                                                         ExploreVariant variant);

workloads::Workload build_workload(const RunConfig& cfg);
EngineConfig engine_config(const RunConfig& cfg, const workloads::Workload& w);

BenchResult run_benchmark(const RunConfig& cfg);

Metrics collect_metrics(const RunResult& run);

void emit_report(const Metrics& metrics, const RunConfig& cfg, const std::string& format,
                 const std::string& path);

std::uint64_t memory_peak_kb();

}  // namespace harness
}  // namespace streamtx
