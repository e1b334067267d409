#include "support/brute_force_tpg.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace streamtx::testsupport {

namespace {

enum class Presence { DirectRead, DirectWrite, DerivedRead, PotentialWrite };

struct Access {
  Timestamp ts;
  std::uint32_t stmt;
  OpId op;
  Presence presence;
};

bool is_source_for_direct(const Access& a) {
  return a.presence == Presence::DirectRead || a.presence == Presence::DirectWrite ||
         a.presence == Presence::PotentialWrite;
}

bool is_source_for_derived(const Access& a) {
  return a.presence == Presence::DirectWrite || a.presence == Presence::PotentialWrite;
}

}  // namespace

EdgeSet brute_force_edges(const std::vector<StateTransaction>& txns, std::uint64_t key_space) {
  std::map<Key, std::vector<Access>> by_key;

  auto all_keys = [&](const std::vector<Key>& candidates) {
    if (!candidates.empty()) return candidates;
    std::vector<Key> keys(key_space);
    for (std::uint64_t k = 0; k < key_space; ++k) keys[k] = k;
    return keys;
  };

  for (const StateTransaction& txn : txns) {
    for (const Operation& op : txn.ops) {
      if (const auto* d = std::get_if<DeterministicKey>(&op.keys)) {
        by_key[d->key].push_back({op.txn_ts, op.stmt_idx, op.op_id,
                                  op.kind == OpKind::Write ? Presence::DirectWrite
                                                           : Presence::DirectRead});
      } else if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
        by_key[m->target].push_back({op.txn_ts, op.stmt_idx, op.op_id, Presence::DirectWrite});
        for (Key k : m->reads)
          if (k != m->target)
            by_key[k].push_back({op.txn_ts, op.stmt_idx, op.op_id, Presence::DerivedRead});
      } else if (const auto* nd = std::get_if<NonDeterministicKey>(&op.keys)) {
        Presence p = op.kind == OpKind::Write ? Presence::PotentialWrite : Presence::DerivedRead;
        for (Key k : all_keys(nd->candidates))
          by_key[k].push_back({op.txn_ts, op.stmt_idx, op.op_id, p});
      } else if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
        if (op.kind == OpKind::Write)
          by_key[w->target].push_back({op.txn_ts, op.stmt_idx, op.op_id, Presence::DirectWrite});
        std::vector<Key> keys = w->reads;
        if (keys.empty() && w->selector.valid()) keys = all_keys(w->candidates);
        for (Key k : keys)
          if (op.kind != OpKind::Write || k != w->target)
            by_key[k].push_back({op.txn_ts, op.stmt_idx, op.op_id, Presence::DerivedRead});
      }
    }
  }

  EdgeSet edges;
  // Per-access governor search over all earlier accesses of the same key —
  // the quadratic form of the definitions, reduced to adjacency.
  for (auto& [key, accesses] : by_key) {
    for (const Access& a : accesses) {
      const Access* best = nullptr;
      for (const Access& b : accesses) {
        if (b.ts >= a.ts) continue;  // same-timestamp pairs share a transaction
        bool eligible = a.presence == Presence::DerivedRead || a.presence == Presence::PotentialWrite
                            ? is_source_for_derived(b)
                            : is_source_for_direct(b);
        if (!eligible) continue;
        if (!best || std::tie(b.ts, b.stmt) > std::tie(best->ts, best->stmt)) best = &b;
      }
      if (!best) continue;
      bool derived =
          a.presence == Presence::DerivedRead || a.presence == Presence::PotentialWrite;
      edges.insert({best->op, a.op, derived ? 1 : 0});
    }
  }

  for (const StateTransaction& txn : txns)
    for (std::size_t i = 1; i < txn.ops.size(); ++i)
      edges.insert({txn.ops[i - 1].op_id, txn.ops[i].op_id, 2});
  return edges;
}

EdgeSet parse_export(const std::string& text) {
  EdgeSet edges;
  std::istringstream is(text);
  std::string tag;
  while (is >> tag) {
    if (tag == "VERTEX") {
      std::string skip;
      for (int i = 0; i < 5; ++i) is >> skip;
    } else if (tag == "EDGE") {
      OpId from, to;
      std::string cls;
      is >> from >> to >> cls;
      edges.insert({from, to, cls == "TD" ? 0 : cls == "PD" ? 1 : 2});
    }
  }
  return edges;
}

}  // namespace streamtx::testsupport
