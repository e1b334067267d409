#pragma once

#include <memory>

#include "streamtx/tpg.hpp"

namespace streamtx {

/// Two-phase TPG construction. Phase 1 ingests decomposed transactions as
/// they arrive, identifies LDs and files every access into key-partitioned
/// sorted lists (virtual operations stand in for multi-key, windowed and
/// non-deterministic accesses). Phase 2 runs after the punctuation and
/// derives TD/PD edges from list adjacency.
class Planner {
 public:
  Planner(std::uint64_t key_space, std::uint32_t max_batch_ts);

  /// Splits a transaction into its atomic operations.
  static std::vector<Operation> decompose(const StateTransaction& txn);

  /// Phase-1 ingest of one transaction. Thread-safe across distinct
  /// transactions; rejects duplicate timestamps.
  void phase1_insert(const StateTransaction& txn);

  /// Creates and files the virtual operations of one already-inserted
  /// operation; returns them. Exposed separately for tests.
  std::vector<Operation> insert_virtual_ops(std::uint32_t vertex_idx);

  /// Phase-2 refinement: derives TD and PD edges and finalizes the
  /// unresolved-parent counters. Must not overlap phase 1.
  void phase2_refine(std::size_t threads = 1);

  /// Longest-path ranks over TD/PD; every edge crosses to a higher rank.
  const std::vector<Stratum>& stratify();

  TPG& tpg() { return *tpg_; }
  const TPG& tpg() const { return *tpg_; }
  std::unique_ptr<TPG> take() { return std::move(tpg_); }

 private:
  struct PendingEdge {
    std::uint32_t from, to;
    DependencyClass cls;
  };

  void file_access(std::uint32_t vertex_idx, Key key, AccessMode mode, bool is_virtual,
                   OpId op_id);
  void refine_list(Key key, std::vector<PendingEdge>& out) const;

  std::unique_ptr<TPG> tpg_;
  bool refined_ = false;
};

}  // namespace streamtx
