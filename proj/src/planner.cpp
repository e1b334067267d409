#include "streamtx/planner.hpp"

#include <algorithm>
#include <thread>

namespace streamtx {

Planner::Planner(std::uint64_t key_space, std::uint32_t max_batch_ts)
    : tpg_(std::make_unique<TPG>(key_space, max_batch_ts)) {}

std::vector<Operation> Planner::decompose(const StateTransaction& txn) {
  if (txn.ops.empty()) throw EngineError("decompose: empty transaction");
  for (std::size_t i = 0; i < txn.ops.size(); ++i) {
    const Operation& op = txn.ops[i];
    if (op.txn_ts != txn.txn_ts) throw EngineError("decompose: operation timestamp mismatch");
    if (op.stmt_idx != i) throw EngineError("decompose: statement order not contiguous");
    if (op.is_virtual) throw EngineError("decompose: virtual operation in transaction");
  }
  return txn.ops;
}

void Planner::phase1_insert(const StateTransaction& txn) {
  if (refined_) throw EngineError("phase1_insert after refinement");
  auto ops = decompose(txn);
  tpg_->register_txn(txn.txn_ts, txn.event_id);

  std::vector<std::uint32_t> indices;
  indices.reserve(ops.size());
  for (Operation& op : ops) indices.push_back(tpg_->add_vertex(std::move(op), txn.group));

  // LDs couple consecutive statements of one transaction.
  for (std::size_t i = 1; i < indices.size(); ++i)
    tpg_->add_edge(indices[i - 1], indices[i], DependencyClass::LD);

  for (std::uint32_t idx : indices) {
    const Operation& op = tpg_->vertex(idx).op;
    if (const auto* d = std::get_if<DeterministicKey>(&op.keys)) {
      file_access(idx, d->key, op.kind == OpKind::Write ? AccessMode::Write : AccessMode::Read,
                  false, op.op_id);
    } else if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
      file_access(idx, m->target, AccessMode::Write, false, op.op_id);
    } else if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
      if (w->size == 0) throw EngineError("phase1_insert: window size must be positive");
      if (op.kind == OpKind::Write) file_access(idx, w->target, AccessMode::Write, false, op.op_id);
    }
    insert_virtual_ops(idx);
  }
}

std::vector<Operation> Planner::insert_virtual_ops(std::uint32_t vertex_idx) {
  TPGVertex& v = tpg_->vertex(vertex_idx);
  const Operation& op = v.op;

  std::vector<Key> keys;
  AccessMode mode = AccessMode::Read;
  if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
    for (Key k : m->reads)
      if (k != m->target) keys.push_back(k);
  } else if (const auto* nd = std::get_if<NonDeterministicKey>(&op.keys)) {
    mode = op.kind == OpKind::Write ? AccessMode::PotWrite : AccessMode::Read;
    if (!nd->candidates.empty()) {
      keys = nd->candidates;
    } else {
      keys.resize(tpg_->key_space());
      for (std::uint64_t k = 0; k < keys.size(); ++k) keys[k] = k;
    }
  } else if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
    if (!w->reads.empty()) {
      for (Key k : w->reads)
        if (op.kind != OpKind::Write || k != w->target) keys.push_back(k);
    } else if (w->selector.valid()) {
      // Key set unknown until execution: track all possible states.
      if (!w->candidates.empty()) {
        keys = w->candidates;
      } else {
        keys.resize(tpg_->key_space());
        for (std::uint64_t k = 0; k < keys.size(); ++k) keys[k] = k;
      }
    }
  }

  std::vector<Operation> out;
  out.reserve(keys.size());
  for (Key k : keys) {
    Operation vo;
    vo.op_id = tpg_->next_virtual_id();
    vo.txn_ts = op.txn_ts;
    vo.stmt_idx = op.stmt_idx;
    vo.kind = OpKind::Read;
    vo.keys = DeterministicKey{k};
    vo.is_virtual = true;
    vo.owner_op = op.op_id;
    v.virtual_children.push_back(vo.op_id);
    file_access(vertex_idx, k, mode, true, vo.op_id);
    out.push_back(std::move(vo));
  }
  return out;
}

void Planner::file_access(std::uint32_t vertex_idx, Key key, AccessMode mode, bool is_virtual,
                          OpId op_id) {
  const Operation& op = tpg_->vertex(vertex_idx).op;
  ListEntry e;
  e.ts = op.txn_ts;
  e.stmt = op.stmt_idx;
  e.vertex = vertex_idx;
  e.op_id = op_id;
  e.mode = mode;
  e.is_virtual = is_virtual;
  tpg_->list(key).insert(e);
}

// Derives TD/PD edges of one key list. Governors must carry a strictly
// smaller timestamp (same-timestamp entries belong to the same transaction
// and are coupled by LDs instead). Virtual read entries are edge targets
// only; potential writes also act as sources since the owner may write
// this key.
void Planner::refine_list(Key key, std::vector<PendingEdge>& out) const {
  const auto& entries = tpg_->list(key).entries();
  constexpr std::int64_t kNone = -1;
  std::int64_t prev_any = kNone, prev_write = kNone;     // governors visible at current ts
  std::int64_t latest_any = kNone, latest_write = kNone;  // running trackers
  Timestamp run_ts = 0;
  bool first = true;
  for (const ListEntry& e : entries) {
    if (first || e.ts != run_ts) {
      prev_any = latest_any;
      prev_write = latest_write;
      run_ts = e.ts;
      first = false;
    }
    if (e.is_virtual) {
      if (prev_write != kNone)
        out.push_back({static_cast<std::uint32_t>(prev_write), e.vertex, DependencyClass::PD});
      if (e.mode == AccessMode::PotWrite) {
        latest_any = e.vertex;
        latest_write = e.vertex;
      }
    } else {
      if (prev_any != kNone)
        out.push_back({static_cast<std::uint32_t>(prev_any), e.vertex, DependencyClass::TD});
      latest_any = e.vertex;
      if (e.mode == AccessMode::Write) latest_write = e.vertex;
    }
  }
}

void Planner::phase2_refine(std::size_t threads) {
  if (refined_) throw EngineError("phase2_refine called twice");
  refined_ = true;

  const std::uint64_t keys = tpg_->key_space();
  std::vector<std::vector<PendingEdge>> per_thread(std::max<std::size_t>(threads, 1));
  if (threads <= 1) {
    for (Key k = 0; k < keys; ++k) refine_list(k, per_thread[0]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::uint64_t> next{0};
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (;;) {
          std::uint64_t k = next.fetch_add(1);
          if (k >= keys) break;
          refine_list(k, per_thread[t]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const auto& edges : per_thread)
    for (const PendingEdge& e : edges) tpg_->add_edge(e.from, e.to, e.cls);

  // Finalize the readiness counters: TD/PD in-degree.
  for (std::uint32_t i = 0; i < tpg_->vertex_count(); ++i) {
    TPGVertex& v = tpg_->vertex(i);
    std::int32_t n = 0;
    for (const DepEdge& e : v.in)
      if (e.cls != DependencyClass::LD) ++n;
    v.unresolved.store(n, std::memory_order_relaxed);
  }
}

namespace {

// True when the later statement reads the earlier statement's write target:
// the read goes through the intra-transaction buffer, so stratum placement
// must order the two even though LDs do not gate scheduling.
bool carries_data(const Operation& writer, const Operation& reader) {
  if (writer.kind != OpKind::Write) return false;
  Key target;
  if (const auto* d = std::get_if<DeterministicKey>(&writer.keys))
    target = d->key;
  else if (const auto* m = std::get_if<MultiKey>(&writer.keys))
    target = m->target;
  else if (const auto* w = std::get_if<WindowRange>(&writer.keys))
    target = w->target;
  else
    return false;
  if (const auto* d = std::get_if<DeterministicKey>(&reader.keys)) return d->key == target;
  if (const auto* m = std::get_if<MultiKey>(&reader.keys))
    return std::find(m->reads.begin(), m->reads.end(), target) != m->reads.end();
  // A non-deterministic sibling read may resolve to any key.
  if (std::holds_alternative<NonDeterministicKey>(reader.keys)) return true;
  return false;
}

}  // namespace

const std::vector<Stratum>& Planner::stratify() {
  if (!refined_) throw EngineError("stratify before phase2_refine");
  const std::uint32_t n = tpg_->vertex_count();

  // Rank over TD/PD edges plus intra-transaction buffered-read order (a
  // statement reading an earlier statement's target must land in a later
  // stratum, or barriered exploration could never resolve the read).
  std::vector<std::vector<std::uint32_t>> extra(n);
  for (Timestamp ts = 1; ts <= tpg_->max_batch_ts(); ++ts) {
    const auto& members = tpg_->txn_vertices(ts);
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        if (carries_data(tpg_->vertex(members[i]).op, tpg_->vertex(members[j]).op))
          extra[members[i]].push_back(members[j]);
  }

  std::vector<std::uint32_t> indeg(n, 0), rank(n, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (const DepEdge& e : tpg_->vertex(i).out)
      if (e.cls != DependencyClass::LD) ++indeg[e.vertex];
    for (std::uint32_t t : extra[i]) ++indeg[t];
  }

  std::vector<std::uint32_t> queue;
  for (std::uint32_t i = 0; i < n; ++i)
    if (indeg[i] == 0) queue.push_back(i);

  std::uint32_t processed = 0, max_rank = 0;
  auto relax = [&](std::uint32_t u, std::uint32_t v) {
    rank[v] = std::max(rank[v], rank[u] + 1);
    if (--indeg[v] == 0) queue.push_back(v);
  };
  for (std::size_t head = 0; head < queue.size(); ++head) {
    std::uint32_t u = queue[head];
    ++processed;
    max_rank = std::max(max_rank, rank[u]);
    for (const DepEdge& e : tpg_->vertex(u).out)
      if (e.cls != DependencyClass::LD) relax(u, e.vertex);
    for (std::uint32_t t : extra[u]) relax(u, t);
  }
  if (processed != n) throw EngineError("stratify: TD/PD subgraph has a cycle");

  std::vector<Stratum> strata(n == 0 ? 0 : max_rank + 1);
  for (std::uint32_t r = 0; r < strata.size(); ++r) strata[r].rank = r;
  for (std::uint32_t i = 0; i < n; ++i) {
    tpg_->vertex(i).stratum = rank[i];
    strata[rank[i]].members.push_back(i);
  }
  tpg_->set_strata(std::move(strata));
  return tpg_->strata();
}

}  // namespace streamtx
