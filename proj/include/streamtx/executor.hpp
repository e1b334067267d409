#pragma once

#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>

#include "streamtx/scheduler.hpp"
#include "streamtx/state_store.hpp"
#include "streamtx/tpg.hpp"
#include "streamtx/udf.hpp"

namespace streamtx {

enum class SpeculationMode : std::uint8_t { Auto, On, Off };

/// Test-only seeded bugs; each one must be caught by the oracle verifier.
struct FaultInjection {
  bool skip_ld_closure = false;
  bool skip_truncation = false;
  bool skip_rollback_cascade = false;
};

struct TransitionRecord {
  std::uint32_t vertex;
  FsmState from, to;
  const char* label;  // T1..T6
};

/// Wall-clock breakdown in nanoseconds, per thread, merged after the run.
struct Breakdown {
  std::uint64_t useful = 0, sync = 0, lock = 0, construct = 0, explore = 0, abort = 0;

  Breakdown& operator+=(const Breakdown& o) {
    useful += o.useful;
    sync += o.sync;
    lock += o.lock;
    construct += o.construct;
    explore += o.explore;
    abort += o.abort;
    return *this;
  }
};

struct ExecutorOptions {
  std::size_t threads = 1;
  SpeculationMode speculation = SpeculationMode::Auto;
  bool collect_breakdown = false;
  bool log_transitions = false;
  FaultInjection faults;
};

struct ExecStats {
  std::uint64_t executed = 0;          // successful vertex executions (incl. redos)
  std::uint64_t redone = 0;            // re-executions after rollback
  std::uint64_t abort_rounds = 0;      // abort-processing invocations
  std::uint64_t signals = 0;           // dependency resolutions delivered
  std::uint64_t fsm_violations = 0;    // illegal transitions observed (must be 0)
  Breakdown breakdown;
  std::vector<TransitionRecord> transitions;  // only when log_transitions
};

/// Executes one batch's S-TPG on a worker pool following a scheduling
/// decision: structured (BFS/DFS over strata) or unstructured exploration,
/// fine or coarse units, eager or lazy abort handling, with multi-version
/// rollback. A vertex subset restricts execution to one transaction group
/// for nested configurations.
class BatchExecutor {
 public:
  BatchExecutor(TPG& tpg, VersionedStateTable& table, const UdfRegistry& registry,
                const SchedulingDecision& decision, const ExecutorOptions& options,
                const std::vector<std::uint32_t>* subset = nullptr);
  ~BatchExecutor();

  /// Runs the batch to completion: every vertex in the subset ends in EXE
  /// or ABT. Throws EngineError on deadlock or integrity violations.
  ExecStats run();

  /// Transactions aborted during this run (their event outputs carry the
  /// failed marker).
  const std::vector<Timestamp>& aborted_txns() const { return aborted_list_; }

  /// Keys truncated per aborted transaction, in processing order; used by
  /// rollback-determinism checks.
  const std::vector<std::pair<Timestamp, std::vector<Key>>>& truncation_log() const {
    return truncation_log_;
  }

 private:
  enum class ExecOutcome { Ok, NotReady, Failed, Skipped };
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::vector<Timestamp> aborted_list_;
  std::vector<std::pair<Timestamp, std::vector<Key>>> truncation_log_;

  friend struct BatchExecutorTestHook;
};

}  // namespace streamtx
