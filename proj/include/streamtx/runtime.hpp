#pragma once

#include <functional>
#include <map>
#include <optional>

#include "streamtx/executor.hpp"
#include "streamtx/planner.hpp"
#include "streamtx/scheduler.hpp"

namespace streamtx {

/// One input tuple. `ts` is assigned at generation time, so a shuffled
/// arrival order exercises out-of-order planning without changing
/// semantics.
struct Event {
  std::uint64_t event_id = 0;
  Timestamp ts = 0;
  std::uint16_t kind = 0;
  GroupTag group = 0;
  std::vector<Value> args;
};

enum class BlotterStatus : std::uint8_t { Pending, Committed, Failed, Filtered };

/// Per-event scratchpad bridging the three processing steps: extracted
/// parameters in, state access results out.
struct EventBlotter {
  std::uint64_t event_id = 0;
  std::vector<Value> params;
  std::vector<Value> results;  // one slot per issued operation
  BlotterStatus status = BlotterStatus::Pending;
};

struct OutputRecord {
  std::uint64_t event_id = 0;
  bool failed = false;  // "failed state access" marker
  std::vector<Value> values;

  bool operator==(const OutputRecord&) const = default;
};

/// Records the state access requests issued by one STATE_ACCESS
/// invocation; all of them form one state transaction.
class TxnBuilder {
 public:
  TxnBuilder(Timestamp ts, std::uint64_t event_id, GroupTag group) {
    txn_.txn_ts = ts;
    txn_.event_id = event_id;
    txn_.group = group;
  }

  void request_read(Key key);
  void request_write(Key key, FunctionRef value_fn, std::vector<Value> args = {},
                     FunctionRef cond_fn = {});
  void request_multikey_write(Key target, std::vector<Key> reads, FunctionRef value_fn,
                              std::vector<Value> args = {}, FunctionRef cond_fn = {});
  void request_window_read(std::vector<Key> reads, std::uint64_t size, FunctionRef agg_fn);
  void request_window_write(Key target, std::vector<Key> reads, std::uint64_t size,
                            FunctionRef agg_fn);
  void request_nondet_read(FunctionRef selector, FunctionRef agg_fn = {},
                           std::vector<Key> candidates = {});
  void request_nondet_write(FunctionRef selector, FunctionRef value_fn,
                            std::vector<Value> args = {}, std::vector<Key> candidates = {},
                            FunctionRef cond_fn = {});

  std::size_t op_count() const { return txn_.ops.size(); }
  StateTransaction take() { return std::move(txn_); }

 private:
  Operation& append(OpKind kind);
  StateTransaction txn_;
};

/// The three user-implemented steps of a transactional operator.
struct Operator {
  std::function<EventBlotter(const Event&)> pre_process;
  std::function<void(TxnBuilder&, EventBlotter&)> state_access;
  std::function<std::optional<OutputRecord>(const Event&, const EventBlotter&)> post_process;
};

struct EngineConfig {
  std::uint64_t key_space = 1;
  Value initial_value = 0;
  std::size_t threads = 1;
  std::size_t ingest_threads = 0;  // 0 = same as threads
  std::uint32_t punctuation_interval = 1024;
  DecisionThresholds thresholds;
  ExploreVariant explore_variant = ExploreVariant::DFS;
  SpeculationMode speculation = SpeculationMode::Auto;
  std::optional<SchedulingDecision> forced;                 // bypasses the model
  std::map<GroupTag, SchedulingDecision> forced_nested;     // per-group override
  bool nested = false;  // distinct decisions per transaction group
  double abort_estimate_hint = 0.0;
  std::map<GroupTag, double> group_abort_hints;
  bool collect_breakdown = false;
  bool log_transitions = false;
  FaultInjection faults;
};

struct BatchReport {
  std::uint64_t batch = 0;
  std::size_t events = 0;
  std::map<GroupTag, TPGProperties> props;
  std::map<GroupTag, SchedulingDecision> decisions;
  ExecStats stats;
  std::uint64_t construct_ns = 0;
  std::uint64_t wall_ns = 0;
  std::vector<std::uint64_t> latencies_ns;  // per event, ingress to post-process
  std::size_t aborted_txns = 0;
};

struct RunResult {
  std::vector<OutputRecord> outputs;           // event-id order
  std::vector<Value> final_state;
  std::vector<std::uint64_t> committed_events;  // sorted
  std::vector<BatchReport> batches;
  std::vector<std::string> decision_trace;
  std::uint64_t fsm_violations = 0;
  std::string final_table_dump;
};

/// Punctuation-driven batch loop wiring the five components together:
/// the ProgressController assigns batch punctuations, the StreamManager
/// pre/post-processes events, the TxnManager plans the TPG, the
/// TxnScheduler decides strategies and the TxnExecutor runs them.
class Engine {
 public:
  Engine(Operator op, EngineConfig cfg, const UdfRegistry* registry);

  RunResult run(const std::vector<Event>& stream);

 private:
  struct BatchState;
  void ingest_batch(BatchState& bs);
  void execute_batch(BatchState& bs, RunResult& result);

  Operator op_;
  EngineConfig cfg_;
  const UdfRegistry* registry_;
  std::map<GroupTag, double> abort_ewma_;
  double abort_ewma_single_ = 0.0;
  bool have_observation_ = false;
};

}  // namespace streamtx
