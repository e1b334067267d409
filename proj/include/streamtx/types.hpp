#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace streamtx {

// Dense unsigned keys; the state table preallocates one chain per key.
using Key = std::uint64_t;
// Logical time. One timestamp per transaction; 0 is reserved for the
// pre-batch snapshot.
using Timestamp = std::uint64_t;
// State values are 64-bit integers.
using Value = std::int64_t;
// Batch-local operation id. Real operations double as vertex indices;
// virtual operations live in a separate id range.
using OpId = std::uint32_t;

inline constexpr OpId kInvalidOp = std::numeric_limits<OpId>::max();
inline constexpr OpId kVirtualOpBase = 1u << 30;

inline bool is_virtual_op_id(OpId id) { return id >= kVirtualOpBase && id != kInvalidOp; }

enum class FunctionKind : std::uint8_t {
  ValueFunction,      // (reads, args) -> value
  ConditionFunction,  // (reads, args) -> bool; false aborts the transaction
  WindowAggregate,    // (window values) -> value
  KeySelector,        // (args) -> accessed keys; [0] is the write target
};

/// Handle into the UDF registry. `cost_us` is the calibrated busy-wait
/// that models computational complexity.
struct FunctionRef {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  FunctionKind kind = FunctionKind::ValueFunction;
  std::uint32_t arity = 0;
  std::uint32_t cost_us = 0;

  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// --- Key specifications -----------------------------------------------------

/// Single known key; writes implicitly read their own key.
struct DeterministicKey {
  Key key = 0;
};

/// Write to `target` whose value function reads `reads`. Read keys other
/// than the target surface as virtual operations at plan time.
struct MultiKey {
  Key target = 0;
  std::vector<Key> reads;
};

/// Key(s) resolved by a selector function at execution time. When the
/// workload declares a candidate set the planner tracks only those keys;
/// otherwise it pessimistically tracks every key in the table.
struct NonDeterministicKey {
  FunctionRef selector;
  std::vector<Key> candidates;  // empty = all keys
};

/// Ranged read over versions in [trigger - size, trigger). Either an
/// explicit read-key list or a selector over candidates. Window writes
/// aggregate the range and store the result under `target`.
struct WindowRange {
  Key target = 0;                // write target; ignored for reads
  std::vector<Key> reads;
  FunctionRef selector;          // optional alternative to `reads`
  std::uint64_t size = 0;        // event-time units, > 0
  Timestamp trigger = 0;
  std::vector<Key> candidates;   // for selector form; empty = all keys
};

using KeySpec = std::variant<DeterministicKey, MultiKey, NonDeterministicKey, WindowRange>;

enum class OpKind : std::uint8_t { Read, Write };

/// One atomic state access: the TPG vertex payload.
struct Operation {
  OpId op_id = kInvalidOp;
  Timestamp txn_ts = 0;
  std::uint32_t stmt_idx = 0;
  OpKind kind = OpKind::Read;
  KeySpec keys;
  FunctionRef value_fn;           // writes and aggregating reads
  FunctionRef cond_fn;            // optional abort predicate
  std::vector<Value> args;        // immediate UDF arguments
  bool is_virtual = false;
  OpId owner_op = kInvalidOp;     // set iff is_virtual
};

/// Group tag for nested per-group scheduling; 0 when untagged.
using GroupTag = std::uint32_t;

/// All operations decomposed from one input event; they share txn_ts.
struct StateTransaction {
  Timestamp txn_ts = 0;
  std::vector<Operation> ops;
  std::uint64_t event_id = 0;
  GroupTag group = 0;
};

/// Total order over a batch: timestamp first, statement order second.
inline std::strong_ordering op_order(const Operation& a, const Operation& b) {
  if (auto c = a.txn_ts <=> b.txn_ts; c != 0) return c;
  return a.stmt_idx <=> b.stmt_idx;
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace streamtx
