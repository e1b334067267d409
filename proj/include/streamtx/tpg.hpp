#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "streamtx/state_store.hpp"
#include "streamtx/types.hpp"

namespace streamtx {

enum class DependencyClass : std::uint8_t { TD, PD, LD };

inline const char* to_string(DependencyClass c) {
  switch (c) {
    case DependencyClass::TD: return "TD";
    case DependencyClass::PD: return "PD";
    case DependencyClass::LD: return "LD";
  }
  return "?";
}

/// Vertex FSM states of the S-TPG.
enum class FsmState : std::uint8_t { BLK = 0, RDY = 1, EXE = 2, ABT = 3 };

inline const char* to_string(FsmState s) {
  switch (s) {
    case FsmState::BLK: return "BLK";
    case FsmState::RDY: return "RDY";
    case FsmState::EXE: return "EXE";
    case FsmState::ABT: return "ABT";
  }
  return "?";
}

struct DepEdge {
  std::uint32_t vertex = 0;  // the other endpoint
  DependencyClass cls = DependencyClass::TD;
};

/// Per-execution bookkeeping: which versions this vertex read and wrote,
/// and which keys a non-deterministic access actually resolved to. The
/// record makes rollback deterministic.
struct ExecRecord {
  std::vector<std::pair<Key, Timestamp>> reads;   // (key, version ts consumed)
  std::vector<std::pair<Key, Timestamp>> writes;  // (key, version ts written)
  std::vector<Key> resolved_keys;
  std::vector<Value> read_values;  // aligned with the op's read slots
  Value output = 0;
  bool has_output = false;
  std::uint32_t exec_thread = 0;

  void clear() {
    reads.clear();
    writes.clear();
    resolved_keys.clear();
    read_values.clear();
    output = 0;
    has_output = false;
    exec_thread = 0;
  }
};

struct TPGVertex {
  Operation op;
  std::vector<DepEdge> out;  // TD/PD/LD successors
  std::vector<DepEdge> in;   // TD/PD/LD predecessors
  std::vector<OpId> virtual_children;
  GroupTag group = 0;
  std::uint32_t stratum = 0;
  std::uint32_t unit = 0;
  std::uint32_t unit_pos = 0;

  // TD/PD in-edges whose source is not yet EXE (ABT counts as resolved).
  std::atomic<std::int32_t> unresolved{0};
  std::atomic<FsmState> fsm{FsmState::BLK};
  std::atomic<bool> fail_logged{false};   // lazy mode: condition failed, abort deferred
  std::atomic<bool> fail_pending{false};  // eager mode: failure detected, not yet processed
  std::atomic<bool> needs_redo{false};
  std::atomic<std::uint8_t> claim{0};  // execution claim; cleared on rollback
  ExecRecord rec;

  TPGVertex() = default;
  TPGVertex(const TPGVertex&) = delete;
  TPGVertex& operator=(const TPGVertex&) = delete;
};

enum class AccessMode : std::uint8_t { Read, Write, PotWrite };

/// One slot of a key-partitioned sorted list: either a real operation or a
/// virtual operation standing in for a multi-key, windowed or
/// non-deterministic access by its owner.
struct ListEntry {
  Timestamp ts = 0;
  std::uint32_t stmt = 0;
  std::uint32_t vertex = 0;  // owning real vertex
  OpId op_id = kInvalidOp;   // real or virtual op id
  AccessMode mode = AccessMode::Read;
  bool is_virtual = false;
};

/// Timestamp-sorted accesses of one key.
class SortedList {
 public:
  void insert(ListEntry e);
  const std::vector<ListEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<ListEntry> entries_;
  RwSpinLock lock_;
};

struct Stratum {
  std::uint32_t rank = 0;
  std::vector<std::uint32_t> members;
};

/// Task precedence graph over one batch of state transactions. Vertices are
/// real operations; TD/PD edges always point from the smaller timestamp to
/// the larger one, so the TD∪PD subgraph is a DAG.
class TPG {
 public:
  explicit TPG(std::uint64_t key_space, std::uint32_t max_batch_ts);

  TPGVertex& vertex(std::uint32_t idx) { return *vertices_[idx]; }
  const TPGVertex& vertex(std::uint32_t idx) const { return *vertices_[idx]; }
  std::uint32_t vertex_count() const { return static_cast<std::uint32_t>(vertices_.size()); }

  SortedList& list(Key key) { return lists_[key]; }
  const SortedList& list(Key key) const { return lists_[key]; }
  std::uint64_t key_space() const { return lists_.size(); }

  const std::vector<std::uint32_t>& txn_vertices(Timestamp ts) const { return by_txn_[ts]; }
  std::uint32_t max_batch_ts() const { return max_batch_ts_; }

  std::uint64_t n_ld() const { return n_ld_; }
  std::uint64_t n_td() const { return n_td_; }
  std::uint64_t n_pd() const { return n_pd_; }

  const std::vector<Stratum>& strata() const { return strata_; }

  // Construction plumbing used by the planner.
  std::uint32_t add_vertex(Operation op, GroupTag group);
  OpId next_virtual_id() { return kVirtualOpBase + virtual_counter_.fetch_add(1); }
  void add_edge(std::uint32_t from, std::uint32_t to, DependencyClass cls);
  void register_txn(Timestamp ts, std::uint64_t event_id);
  bool txn_seen(Timestamp ts) const { return ts < txn_seen_.size() && txn_seen_[ts] != 0; }
  void set_strata(std::vector<Stratum> s) { strata_ = std::move(s); }

  /// Line-oriented debug export: `VERTEX op_id ts stmt kind key` and
  /// `EDGE src dst {TD|PD|LD}`.
  std::string export_text() const;

 private:
  std::deque<std::unique_ptr<TPGVertex>> vertices_;
  std::vector<SortedList> lists_;
  std::vector<std::vector<std::uint32_t>> by_txn_;  // ts -> vertex indices
  std::vector<std::uint8_t> txn_seen_;
  std::uint32_t max_batch_ts_ = 0;
  std::atomic<std::uint32_t> virtual_counter_{0};
  std::uint64_t n_ld_ = 0, n_td_ = 0, n_pd_ = 0;
  std::vector<Stratum> strata_;
  std::mutex mu_;
};

}  // namespace streamtx
