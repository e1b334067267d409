#include "streamtx/oracle.hpp"

#include <algorithm>
#include <sstream>

namespace streamtx {

namespace {

struct OracleChain {
  std::vector<std::pair<Timestamp, Value>> versions;  // ascending ts
};

struct TxnSim {
  const UdfRegistry& reg;
  std::vector<OracleChain>& chains;
  Timestamp ts;
  std::vector<std::pair<Key, Value>> buffer;  // intra-txn write buffer

  Value read_point(Key k) const {
    for (auto it = buffer.rbegin(); it != buffer.rend(); ++it)
      if (it->first == k) return it->second;
    const auto& vs = chains[k].versions;
    // Serial order leaves no future versions; still honor the strict bound.
    for (auto it = vs.rbegin(); it != vs.rend(); ++it)
      if (it->first < ts) return it->second;
    throw EngineError("oracle: no version before reader ts");
  }

  std::vector<Value> window_values(const std::vector<Key>& keys, std::uint64_t size) const {
    Timestamp lo = ts >= size ? ts - size : 0;
    std::vector<Value> out;
    for (Key k : keys)
      for (const auto& [vts, val] : chains[k].versions)
        if (vts >= lo && vts < ts) out.push_back(val);
    return out;
  }
};

}  // namespace

OracleResult serial_oracle(const workloads::Workload& w, std::uint32_t punctuation_interval) {
  if (punctuation_interval == 0) throw ConfigError("oracle: punctuation interval must be >= 1");
  const UdfRegistry& reg = *w.registry;

  std::vector<OracleChain> chains(w.key_space);
  for (auto& c : chains) c.versions.push_back({0, w.initial_value});

  OracleResult result;

  std::size_t pos = 0;
  while (pos < w.events.size()) {
    std::size_t count = std::min<std::size_t>(punctuation_interval, w.events.size() - pos);

    // Strict timestamp order regardless of arrival order.
    std::vector<const Event*> batch;
    batch.reserve(count);
    Timestamp min_ts = ~0ull;
    for (std::size_t i = 0; i < count; ++i) {
      batch.push_back(&w.events[pos + i]);
      min_ts = std::min(min_ts, w.events[pos + i].ts);
    }
    std::sort(batch.begin(), batch.end(),
              [](const Event* a, const Event* b) { return a->ts < b->ts; });
    Timestamp base = min_ts - 1;

    for (const Event* e : batch) {
      EventBlotter eb = w.op.pre_process(*e);
      eb.event_id = e->event_id;
      if (eb.status == BlotterStatus::Filtered) {
        w.op.post_process(*e, eb);
        continue;
      }
      Timestamp local_ts = e->ts - base;
      TxnBuilder builder(local_ts, e->event_id, e->group);
      w.op.state_access(builder, eb);
      StateTransaction txn = builder.take();
      eb.results.assign(txn.ops.size(), 0);

      TxnSim sim{reg, chains, local_ts, {}};
      bool aborted = false;
      for (const Operation& op : txn.ops) {
        std::vector<Value> reads;
        std::vector<Key> read_keys;
        bool window = false;
        Key target = 0;
        bool has_target = false;

        if (const auto* d = std::get_if<DeterministicKey>(&op.keys)) {
          read_keys.push_back(d->key);
          if (op.kind == OpKind::Write) {
            target = d->key;
            has_target = true;
          }
        } else if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
          read_keys = m->reads;
          target = m->target;
          has_target = true;
        } else if (const auto* nd = std::get_if<NonDeterministicKey>(&op.keys)) {
          UdfContext ctx{{}, op.args};
          std::vector<Key> keys = reg.selector_fn(nd->selector)(ctx);
          if (keys.empty() || keys[0] >= w.key_space) {
            aborted = true;
            break;
          }
          if (op.kind == OpKind::Write) {
            target = keys[0];
            has_target = true;
            read_keys.assign(keys.begin() + 1, keys.end());
            if (read_keys.empty()) read_keys.push_back(target);
          } else {
            read_keys = keys;
          }
        } else if (const auto* wr = std::get_if<WindowRange>(&op.keys)) {
          window = true;
          std::vector<Key> keys = wr->reads;
          if (keys.empty() && wr->selector.valid()) {
            UdfContext ctx{{}, op.args};
            keys = reg.selector_fn(wr->selector)(ctx);
          }
          reads = sim.window_values(keys, wr->size);
          if (op.kind == OpKind::Write) {
            target = wr->target;
            has_target = true;
          }
        }
        if (!window)
          for (Key k : read_keys) {
            if (k >= w.key_space) throw EngineError("oracle: unknown key");
            reads.push_back(sim.read_point(k));
          }

        if (op.cond_fn.valid()) {
          UdfContext ctx{reads, op.args};
          if (!reg.condition_fn(op.cond_fn)(ctx)) {
            aborted = true;
            break;
          }
        }

        Value out = 0;
        bool has_out = false;
        if (op.value_fn.valid()) {
          if (op.value_fn.kind == FunctionKind::WindowAggregate) {
            out = reg.window_fn(op.value_fn)(reads);
          } else {
            UdfContext ctx{reads, op.args};
            out = reg.value_fn(op.value_fn)(ctx);
          }
          has_out = true;
        } else if (!reads.empty()) {
          out = reads.front();
          has_out = true;
        }
        if (has_out && op.stmt_idx < eb.results.size()) eb.results[op.stmt_idx] = out;
        if (op.kind == OpKind::Write && has_target) sim.buffer.emplace_back(target, out);
      }

      if (aborted) {
        eb.status = BlotterStatus::Failed;
      } else {
        eb.status = BlotterStatus::Committed;
        result.committed_events.push_back(e->event_id);
        for (const auto& [k, v] : sim.buffer) {
          auto& vs = chains[k].versions;
          if (!vs.empty() && vs.back().first == local_ts)
            vs.back().second = v;
          else
            vs.push_back({local_ts, v});
        }
      }
      auto out = w.op.post_process(*e, eb);
      if (out) {
        out->event_id = e->event_id;
        out->failed = eb.status == BlotterStatus::Failed;
        result.outputs.push_back(std::move(*out));
      }
    }

    // Batch boundary: collapse histories to the next snapshot.
    for (auto& c : chains) c.versions.assign(1, {0, c.versions.back().second});
    pos += count;
  }

  result.final_state.reserve(chains.size());
  std::ostringstream dump;
  for (std::size_t k = 0; k < chains.size(); ++k) {
    result.final_state.push_back(chains[k].versions.back().second);
    dump << k << ' ' << 0 << ':' << chains[k].versions.back().second << '\n';
  }
  result.final_table_dump = dump.str();
  std::sort(result.committed_events.begin(), result.committed_events.end());
  std::sort(result.outputs.begin(), result.outputs.end(),
            [](const OutputRecord& a, const OutputRecord& b) { return a.event_id < b.event_id; });
  return result;
}

}  // namespace streamtx
