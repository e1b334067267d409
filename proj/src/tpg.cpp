#include "streamtx/tpg.hpp"

#include <algorithm>
#include <sstream>

namespace streamtx {

void SortedList::insert(ListEntry e) {
  ExclusiveGuard g(lock_);
  auto it = std::lower_bound(entries_.begin(), entries_.end(), e,
                             [](const ListEntry& a, const ListEntry& b) {
                               return std::tie(a.ts, a.stmt) < std::tie(b.ts, b.stmt);
                             });
  entries_.insert(it, e);
}

TPG::TPG(std::uint64_t key_space, std::uint32_t max_batch_ts)
    : lists_(key_space),
      by_txn_(static_cast<std::size_t>(max_batch_ts) + 1),
      txn_seen_(static_cast<std::size_t>(max_batch_ts) + 1, 0),
      max_batch_ts_(max_batch_ts) {
  if (key_space == 0) throw ConfigError("tpg: key space must be positive");
}

std::uint32_t TPG::add_vertex(Operation op, GroupTag group) {
  std::scoped_lock lk(mu_);
  auto idx = static_cast<std::uint32_t>(vertices_.size());
  auto v = std::make_unique<TPGVertex>();
  op.op_id = idx;
  v->op = std::move(op);
  v->group = group;
  vertices_.push_back(std::move(v));
  by_txn_[vertices_.back()->op.txn_ts].push_back(idx);
  return idx;
}

void TPG::register_txn(Timestamp ts, std::uint64_t) {
  std::scoped_lock lk(mu_);
  if (ts == 0 || ts > max_batch_ts_)
    throw EngineError("tpg: transaction timestamp out of batch range");
  if (txn_seen_[ts]) throw EngineError("tpg: duplicate transaction timestamp");
  txn_seen_[ts] = 1;
}

void TPG::add_edge(std::uint32_t from, std::uint32_t to, DependencyClass cls) {
  TPGVertex& dst = *vertices_[to];
  for (const DepEdge& e : dst.in)
    if (e.vertex == from && e.cls == cls) return;  // dedupe
  dst.in.push_back({from, cls});
  vertices_[from]->out.push_back({to, cls});
  switch (cls) {
    case DependencyClass::LD: ++n_ld_; break;
    case DependencyClass::TD: ++n_td_; break;
    case DependencyClass::PD: ++n_pd_; break;
  }
}

std::string TPG::export_text() const {
  std::ostringstream os;
  for (const auto& vp : vertices_) {
    const Operation& op = vp->op;
    std::string key = "-";
    if (const auto* d = std::get_if<DeterministicKey>(&op.keys))
      key = std::to_string(d->key);
    else if (const auto* m = std::get_if<MultiKey>(&op.keys))
      key = std::to_string(m->target);
    else if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
      if (op.kind == OpKind::Write) key = std::to_string(w->target);
    }
    os << "VERTEX " << op.op_id << ' ' << op.txn_ts << ' ' << op.stmt_idx << ' '
       << (op.kind == OpKind::Write ? 'W' : 'R') << ' ' << key << '\n';
  }
  for (const auto& vp : vertices_)
    for (const DepEdge& e : vp->out)
      os << "EDGE " << vp->op.op_id << ' ' << vertices_[e.vertex]->op.op_id << ' '
         << to_string(e.cls) << '\n';
  return os.str();
}

}  // namespace streamtx
