#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>

#include "streamtx/runtime.hpp"

namespace streamtx {
namespace workloads {

/// The six tunable workload characteristics plus generator plumbing.
struct WorkloadKnobs {
  double theta = 0.2;                       // Zipf skew, 0..1
  double abort_ratio = 0.01;                // a, 0..0.9
  std::uint32_t txn_len = 2;                // l, 1..10
  std::uint32_t udf_cost_us = 10;           // C, 0..100
  std::uint32_t multi_access = 1;           // r, 1..10 (reads per operation)
  std::uint32_t punctuation_interval = 10240;  // T, 5120..81920
  std::uint64_t key_space = 4096;
  std::uint64_t seed = 1;
  std::uint64_t events = 0;  // 0 = one punctuation interval

  Value initial_value = 1'000'000;

  // Streaming-ledger mix.
  double transfer_ratio = 0.5;

  // Windowed GrepSum.
  std::uint64_t window_size = 1000;
  std::uint32_t window_trigger_period = 100;
  std::uint32_t window_read_keys = 100;

  // Non-deterministic GrepSum.
  double nondet_fraction = 0.25;
  bool nondet_pessimistic = false;  // track all keys instead of candidates

  void validate() const;
};

/// A runnable benchmark: generated events plus the operator and UDFs both
/// the engine and the serial reference executor share.
struct Workload {
  std::string name;
  std::uint64_t key_space = 0;
  Value initial_value = 0;
  std::shared_ptr<UdfRegistry> registry;
  Operator op;
  std::vector<Event> events;
  WorkloadKnobs knobs;
};

/// Deterministic uniform integer in [0, n) from raw engine output;
/// std::uniform_int_distribution is implementation-defined, these are not.
std::uint64_t uniform_u64(std::mt19937_64& rng, std::uint64_t n);
double uniform_unit(std::mt19937_64& rng);

/// Zipfian sampler: P(rank k) proportional to k^(-theta), ranks 1..n
/// mapped onto keys 0..n-1 (key 0 hottest).
class ZipfSampler {
 public:
  ZipfSampler(double theta, std::uint64_t key_space);
  Key sample(std::mt19937_64& rng) const;
  double theta() const { return theta_; }

 private:
  double theta_;
  std::vector<double> cdf_;
};

Key zipf_key(double theta, std::uint64_t key_space, std::mt19937_64& rng);

/// Streaming Ledger: deposits (one guarded-free write) and transfers (two
/// guarded writes with a parametric dependency from sender to receiver).
Workload gen_sl(const WorkloadKnobs& knobs);

enum class GsVariant { Plain, Window, NonDet };
Workload gen_gs(const WorkloadKnobs& knobs, GsVariant variant);

/// Toll Processing abstraction: two key-disjoint transaction groups, one
/// skewed with frequent aborts, one uniform and nearly abort-free.
Workload gen_tp(const WorkloadKnobs& knobs);

/// One phase of a dynamic workload: every listed knob ramps linearly from
/// start to end over the phase.
struct PhaseSpec {
  std::uint64_t length = 0;
  std::map<std::string, std::pair<double, double>> trends;
};

Workload gen_dynamic(const std::vector<PhaseSpec>& phases, const WorkloadKnobs& base);

/// Permutes events within bounded displacement without crossing
/// punctuation boundaries; timestamps are untouched, so this exercises
/// out-of-order arrival.
void shuffle_arrival(std::vector<Event>& events, std::uint64_t window,
                     std::uint32_t punctuation_interval, std::mt19937_64& rng);

/// Line-oriented event files: `# key=value` header lines, then
/// `ts,type,group,args...` rows.
std::string events_to_csv(const Workload& w);
std::vector<Event> events_from_csv(const std::string& text);

/// Re-creates a workload by name with the given knobs (used by the CLI and
/// by the CSV reader).
Workload make_workload(const std::string& name, const WorkloadKnobs& knobs);

/// Parses a dynamic-workload script: one `phase` line per phase,
/// `events=N knob=start:end ...`.
std::vector<PhaseSpec> parse_dynamic_script(const std::string& text);

}  // namespace workloads
}  // namespace streamtx
