#include "streamtx/executor.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <thread>

namespace streamtx {

namespace {

using Clock = std::chrono::steady_clock;

inline std::uint64_t ns_since(Clock::time_point t0) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

// Resolved concrete accesses of one operation. Selector evaluation is pure
// given the operation's arguments, so resolution may run ahead of execution.
struct ResolvedAccess {
  bool has_target = false;
  Key target = 0;
  std::vector<Key> reads;
  bool window = false;
  Timestamp window_lo = 0, window_hi = 0;
};

const char* transition_label(FsmState from, FsmState to, bool rollback) {
  if (to == FsmState::ABT) return "T4";
  if (from == FsmState::BLK && to == FsmState::RDY) return rollback ? "T5" : "T1";
  if (from == FsmState::RDY && to == FsmState::EXE) return "T2";
  if (from == FsmState::BLK && to == FsmState::EXE) return "T3";
  if (from == FsmState::EXE && to == FsmState::RDY) return "T5";
  if (from == FsmState::EXE && to == FsmState::BLK) return "T6";
  if (from == FsmState::RDY && to == FsmState::BLK) return "T6";
  return nullptr;  // illegal
}

struct SpinBarrier {
  explicit SpinBarrier(std::size_t n) : n_(n) {}

  template <typename Leader>
  void arrive_and_wait(Leader&& leader) {
    std::uint64_t gen = gen_.load(std::memory_order_acquire);
    if (count_.fetch_add(1, std::memory_order_acq_rel) + 1 == n_) {
      leader();
      count_.store(0, std::memory_order_relaxed);
      gen_.fetch_add(1, std::memory_order_release);
    } else {
      while (gen_.load(std::memory_order_acquire) == gen) std::this_thread::yield();
    }
  }

  std::size_t n_;
  std::atomic<std::size_t> count_{0};
  std::atomic<std::uint64_t> gen_{0};
};

}  // namespace

struct BatchExecutor::Impl {
  TPG& tpg;
  VersionedStateTable& table;
  const UdfRegistry& reg;
  SchedulingDecision decision;
  ExecutorOptions opt;
  bool speculation = false;

  std::vector<std::uint32_t> subset;
  std::vector<std::uint8_t> in_subset;

  std::vector<SchedulingUnit> units;
  std::vector<std::uint32_t> vertex_unit, vertex_unit_pos;

  // Structured exploration: per-stratum unit segments.
  struct Segment {
    std::vector<std::uint32_t> members;
  };
  std::vector<std::vector<Segment>> seg_by_stratum;
  std::vector<std::vector<std::vector<std::uint32_t>>> dfs_plan;  // [thread][stratum]
  std::unique_ptr<std::atomic<std::size_t>[]> seg_cursor;
  std::unique_ptr<std::atomic<std::int64_t>[]> stratum_pending;
  std::unique_ptr<std::atomic<std::int64_t>[]> stratum_stalled;
  std::unique_ptr<std::mutex[]> retry_mu;
  std::vector<std::vector<std::uint32_t>> retry;
  std::uint32_t max_stratum = 0;
  std::atomic<std::uint32_t> cur_stratum{0};
  std::unique_ptr<SpinBarrier> barrier;

  // Unstructured exploration: shared pool of runnable units.
  std::mutex pool_mu;
  std::deque<std::uint32_t> ready_pool;

  // Re-execution after rollback, vertex-granular in every mode.
  std::mutex redo_mu;
  std::deque<std::uint32_t> redo_pool;

  // Execution holds the lock shared; abort processing holds it exclusively,
  // so rollbacks never race in-flight executions. A blocking lock: holders
  // may be descheduled on oversubscribed machines, so waiters must park.
  std::shared_mutex exec_lock;
  struct Inbox {
    std::mutex mu;
    std::vector<std::uint32_t> items;
  };
  std::unique_ptr<Inbox[]> inboxes;
  std::size_t inbox_count = 0;
  std::mutex lazy_mu;
  std::vector<std::uint32_t> lazy_logged;
  std::mutex finish_mu;

  std::atomic<std::int64_t> remaining{0};
  std::atomic<std::int64_t> aborts_inflight{0};
  std::atomic<std::uint64_t> progress{0};
  std::atomic<bool> done{false};
  std::atomic<std::uint64_t> lazy_rounds{0};
  std::atomic<std::size_t> dfs_finished{0};
  std::atomic<bool> fatal{false};
  std::string fatal_message;
  std::mutex fatal_mu;

  std::vector<Timestamp> aborted;  // mutated under the exclusive lock only
  std::vector<std::pair<Timestamp, std::vector<Key>>> trunc_log;
  std::set<Timestamp> aborted_set;

  std::unique_ptr<std::atomic<std::uint32_t>[]> exec_count;
  std::vector<ExecStats> thread_stats;
  std::mutex log_mu;
  std::vector<TransitionRecord> transitions;
  std::atomic<std::uint64_t> violations{0};

  Impl(TPG& g, VersionedStateTable& t, const UdfRegistry& r, const SchedulingDecision& d,
       const ExecutorOptions& o, const std::vector<std::uint32_t>* sub)
      : tpg(g), table(t), reg(r), decision(d), opt(o) {
    if (opt.threads == 0) throw ConfigError("executor: thread count must be positive");
    speculation =
        opt.speculation == SpeculationMode::On ||
        (opt.speculation == SpeculationMode::Auto &&
         (decision.explore == ExploreKind::NS ||
          (decision.explore == ExploreKind::S && decision.explore_variant == ExploreVariant::DFS)));
    in_subset.assign(tpg.vertex_count(), 0);
    if (sub) {
      subset = *sub;
    } else {
      subset.resize(tpg.vertex_count());
      for (std::uint32_t i = 0; i < subset.size(); ++i) subset[i] = i;
    }
    for (std::uint32_t v : subset) in_subset[v] = 1;
    exec_count = std::make_unique<std::atomic<std::uint32_t>[]>(tpg.vertex_count());
    for (std::uint32_t i = 0; i < tpg.vertex_count(); ++i) exec_count[i].store(0);
    thread_stats.resize(opt.threads);
  }

  bool structured() const { return decision.explore == ExploreKind::S; }
  bool dfs() const { return decision.explore_variant == ExploreVariant::DFS; }
  bool eager() const { return decision.abort == AbortKind::EAGER; }

  // --- setup -----------------------------------------------------------------

  void build_units() {
    units = form_units(tpg, decision.granularity,
                       subset.size() == tpg.vertex_count() ? nullptr : &subset);
    vertex_unit.assign(tpg.vertex_count(), ~0u);
    vertex_unit_pos.assign(tpg.vertex_count(), 0);
    for (std::uint32_t u = 0; u < units.size(); ++u)
      for (std::uint32_t p = 0; p < units[u].members.size(); ++p) {
        vertex_unit[units[u].members[p]] = u;
        vertex_unit_pos[units[u].members[p]] = p;
      }
    if (structured()) build_segments();
  }

  void build_segments() {
    max_stratum = 0;
    for (std::uint32_t v : subset) max_stratum = std::max(max_stratum, tpg.vertex(v).stratum);
    seg_by_stratum.assign(max_stratum + 1, {});
    stratum_pending = std::make_unique<std::atomic<std::int64_t>[]>(max_stratum + 1);
    stratum_stalled = std::make_unique<std::atomic<std::int64_t>[]>(max_stratum + 1);
    seg_cursor = std::make_unique<std::atomic<std::size_t>[]>(max_stratum + 1);
    for (std::uint32_t s = 0; s <= max_stratum; ++s) {
      stratum_pending[s].store(0);
      stratum_stalled[s].store(0);
      seg_cursor[s].store(0);
    }
    retry_mu = std::make_unique<std::mutex[]>(max_stratum + 1);
    retry.assign(max_stratum + 1, {});

    // Members of one unit within one stratum run consecutively on one
    // thread, so coarse units amortize scheduling under strata too.
    for (const SchedulingUnit& u : units) {
      std::map<std::uint32_t, Segment> per_stratum;
      for (std::uint32_t v : u.members) per_stratum[tpg.vertex(v).stratum].members.push_back(v);
      for (auto& [s, seg] : per_stratum) {
        stratum_pending[s].fetch_add(static_cast<std::int64_t>(seg.members.size()));
        seg_by_stratum[s].push_back(std::move(seg));
      }
    }

    if (dfs()) {
      dfs_plan.assign(opt.threads, std::vector<std::vector<std::uint32_t>>(max_stratum + 1));
      for (std::uint32_t s = 0; s <= max_stratum; ++s) {
        // Balance operation counts within each stratum.
        std::vector<std::size_t> load(opt.threads, 0);
        std::vector<std::uint32_t> order(seg_by_stratum[s].size());
        for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
          return seg_by_stratum[s][a].members.size() > seg_by_stratum[s][b].members.size();
        });
        for (std::uint32_t seg : order) {
          std::size_t t =
              static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
          dfs_plan[t][s].push_back(seg);
          load[t] += seg_by_stratum[s][seg].members.size();
        }
      }
    }
  }

  // --- FSM -------------------------------------------------------------------

  bool transition(std::uint32_t vi, FsmState from, FsmState to, bool rollback, ExecStats* stats) {
    TPGVertex& v = tpg.vertex(vi);
    FsmState expected = from;
    if (!v.fsm.compare_exchange_strong(expected, to)) return false;
    const char* label = transition_label(from, to, rollback);
    if (!label) {
      violations.fetch_add(1);
      label = "??";
    }
    if (opt.log_transitions) {
      std::scoped_lock lk(log_mu);
      transitions.push_back({vi, from, to, label});
    }
    progress.fetch_add(1, std::memory_order_relaxed);
    return true;
  }

  FsmState force_abort(std::uint32_t vi) {
    TPGVertex& v = tpg.vertex(vi);
    FsmState old = v.fsm.exchange(FsmState::ABT);
    if (old == FsmState::ABT) return old;
    if (!transition_label(old, FsmState::ABT, false)) violations.fetch_add(1);
    if (opt.log_transitions) {
      std::scoped_lock lk(log_mu);
      transitions.push_back({vi, old, FsmState::ABT, "T4"});
    }
    progress.fetch_add(1, std::memory_order_relaxed);
    return old;
  }

  void on_settled(std::uint32_t vi) {
    remaining.fetch_sub(1, std::memory_order_acq_rel);
    if (structured()) stratum_pending[tpg.vertex(vi).stratum].fetch_sub(1);
  }

  void on_unsettled(std::uint32_t vi) {
    remaining.fetch_add(1, std::memory_order_acq_rel);
    if (structured()) stratum_pending[tpg.vertex(vi).stratum].fetch_add(1);
  }

  void try_ready(std::uint32_t vi, ExecStats* stats) {
    if (tpg.vertex(vi).unresolved.load(std::memory_order_acquire) == 0)
      transition(vi, FsmState::BLK, FsmState::RDY, false, stats);  // T1
  }

  void wake_unit_at(std::uint32_t vi) {
    std::uint32_t u = vertex_unit[vi];
    if (u == ~0u) return;
    if (units[u].cursor.load(std::memory_order_acquire) != vertex_unit_pos[vi]) return;
    enqueue_unit_if_idle(u);
  }

  void enqueue_unit_if_idle(std::uint32_t u) {
    std::uint8_t expected = 0;
    if (units[u].state.compare_exchange_strong(expected, 1)) {
      std::scoped_lock lk(pool_mu);
      ready_pool.push_back(u);
    }
  }

  // Dependency-resolution signal along every TD/PD out-edge once a vertex
  // reaches EXE or ABT.
  void signal_children(std::uint32_t vi, ExecStats* stats) {
    TPGVertex& v = tpg.vertex(vi);
    for (const DepEdge& e : v.out) {
      if (e.cls == DependencyClass::LD) {
        // LDs never gate scheduling, but a sibling may be parked on an
        // intra-transaction buffered read.
        if (decision.explore == ExploreKind::NS) wake_unit_at(e.vertex);
        continue;
      }
      if (stats) ++stats->signals;
      TPGVertex& w = tpg.vertex(e.vertex);
      if (w.unresolved.fetch_sub(1, std::memory_order_acq_rel) - 1 == 0) {
        try_ready(e.vertex, stats);
        dispatch_ready(e.vertex);
      }
    }
  }

  void dispatch_ready(std::uint32_t vi) {
    if (tpg.vertex(vi).needs_redo.exchange(false)) {
      std::scoped_lock lk(redo_mu);
      redo_pool.push_back(vi);
    }
    if (decision.explore == ExploreKind::NS) wake_unit_at(vi);
  }

  // --- access resolution and governor checks ----------------------------------

  ResolvedAccess resolve_access(const Operation& op) const {
    ResolvedAccess a;
    if (const auto* d = std::get_if<DeterministicKey>(&op.keys)) {
      if (op.kind == OpKind::Write) {
        a.has_target = true;
        a.target = d->key;
      }
      a.reads.push_back(d->key);
    } else if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
      a.has_target = true;
      a.target = m->target;
      a.reads = m->reads;
    } else if (const auto* nd = std::get_if<NonDeterministicKey>(&op.keys)) {
      UdfContext ctx{{}, op.args};
      std::vector<Key> keys = reg.selector_fn(nd->selector)(ctx);
      if (keys.empty()) throw EngineError("non-deterministic selector resolved no keys");
      if (op.kind == OpKind::Write) {
        a.has_target = true;
        a.target = keys[0];
        a.reads.assign(keys.begin() + 1, keys.end());
        if (a.reads.empty()) a.reads.push_back(a.target);
      } else {
        a.reads = keys;
      }
    } else if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
      a.window = true;
      a.window_hi = w->trigger == 0 ? op.txn_ts : w->trigger;
      a.window_lo = a.window_hi >= w->size ? a.window_hi - w->size : 0;
      if (!w->reads.empty()) {
        a.reads = w->reads;
      } else {
        UdfContext ctx{{}, op.args};
        a.reads = reg.selector_fn(w->selector)(ctx);
      }
      if (op.kind == OpKind::Write) {
        a.has_target = true;
        a.target = w->target;
      }
    }
    for (Key k : a.reads)
      if (k >= table.key_count())
        throw EngineError("operation resolved to unknown key " + std::to_string(k));
    if (a.has_target && a.target >= table.key_count())
      throw EngineError("operation resolved to unknown key " + std::to_string(a.target));
    return a;
  }

  static bool deterministic_target(const Operation& op, Key& out) {
    if (op.kind != OpKind::Write) return false;
    if (const auto* d = std::get_if<DeterministicKey>(&op.keys)) {
      out = d->key;
      return true;
    }
    if (const auto* m = std::get_if<MultiKey>(&op.keys)) {
      out = m->target;
      return true;
    }
    if (const auto* w = std::get_if<WindowRange>(&op.keys)) {
      out = w->target;
      return true;
    }
    return false;  // non-deterministic writes are not visible intra-txn
  }

  // The sibling statement (same transaction, highest earlier stmt) whose
  // deterministic write target is `key`. Intra-transaction reads observe
  // those writes through the writer's record, not the state table.
  std::int64_t buffered_writer(const TPGVertex& v, Key key) const {
    std::int64_t best = -1;
    std::uint32_t best_stmt = 0;
    for (std::uint32_t m : tpg.txn_vertices(v.op.txn_ts)) {
      const TPGVertex& w = tpg.vertex(m);
      if (w.op.stmt_idx >= v.op.stmt_idx) continue;
      Key t;
      if (!deterministic_target(w.op, t) || t != key) continue;
      if (best < 0 || w.op.stmt_idx > best_stmt) {
        best = m;
        best_stmt = w.op.stmt_idx;
      }
    }
    return best;
  }

  // True when the version a read of `key` at `ts` would consume is already
  // committed (or provably will never be written by a preceding operation).
  bool governor_settled(Key key, Timestamp ts) const {
    const auto& entries = tpg.list(key).entries();
    auto it = std::lower_bound(entries.begin(), entries.end(), ts,
                               [](const ListEntry& e, Timestamp t) { return e.ts < t; });
    while (it != entries.begin()) {
      --it;
      if (it->mode == AccessMode::Read) continue;
      const TPGVertex& u = tpg.vertex(it->vertex);
      FsmState s = u.fsm.load(std::memory_order_acquire);
      if (s == FsmState::ABT) continue;
      if (u.fail_pending.load(std::memory_order_acquire)) continue;  // doomed transaction
      if (s != FsmState::EXE) return false;
      for (const auto& [wk, wts] : u.rec.writes)
        if (wk == key) return true;
      // EXE without a version here: logged failure or a potential write
      // resolved to another key. Keep walking.
      if (u.fail_logged.load(std::memory_order_acquire)) continue;
      if (it->mode == AccessMode::PotWrite) continue;
      return false;
    }
    return true;  // snapshot governs
  }

  // Window reads span versions whose writers are not all direct TPG
  // parents; settledness is checked against the list range.
  bool range_settled(Key key, Timestamp lo, Timestamp hi) const {
    const auto& entries = tpg.list(key).entries();
    auto it = std::lower_bound(entries.begin(), entries.end(), lo,
                               [](const ListEntry& e, Timestamp t) { return e.ts < t; });
    for (; it != entries.end() && it->ts < hi; ++it) {
      if (it->mode == AccessMode::Read) continue;
      const TPGVertex& u = tpg.vertex(it->vertex);
      FsmState s = u.fsm.load(std::memory_order_acquire);
      if (s == FsmState::ABT) continue;
      if (u.fail_pending.load(std::memory_order_acquire)) continue;
      if (s != FsmState::EXE) return false;
    }
    return true;
  }

  // --- execution ---------------------------------------------------------------

  struct GatherResult {
    bool ready = true;
    std::vector<Value> values;
    std::vector<std::pair<Key, Timestamp>> provenance;
  };

  GatherResult gather_reads(const TPGVertex& v, const ResolvedAccess& a) const {
    GatherResult g;
    if (a.window) {
      auto per_key = table.window_read(a.reads, a.window_hi, a.window_hi - a.window_lo);
      for (std::size_t i = 0; i < per_key.size(); ++i)
        for (const Version& ver : per_key[i]) {
          g.values.push_back(ver.value);
          g.provenance.emplace_back(a.reads[i], ver.ts);
        }
      return g;
    }
    for (Key k : a.reads) {
      std::int64_t sibling = buffered_writer(v, k);
      if (sibling >= 0) {
        const TPGVertex& w = tpg.vertex(sibling);
        FsmState s = w.fsm.load(std::memory_order_acquire);
        bool doomed = s == FsmState::ABT || w.fail_pending.load(std::memory_order_acquire) ||
                      (s == FsmState::EXE && w.fail_logged.load(std::memory_order_acquire));
        if (s == FsmState::EXE && !doomed) {
          g.values.push_back(w.rec.output);
          g.provenance.emplace_back(k, v.op.txn_ts);
          continue;
        }
        if (!doomed) {
          g.ready = false;  // wait for the sibling's write
          return g;
        }
        // Doomed transaction: fall through to the table, the value is moot.
      }
      Version ver = table.read_version(k, v.op.txn_ts);
      g.values.push_back(ver.value);
      g.provenance.emplace_back(k, ver.ts);
    }
    return g;
  }

  void record_resolution(TPGVertex& v, const ResolvedAccess& a) {
    if (a.window || std::holds_alternative<NonDeterministicKey>(v.op.keys)) {
      v.rec.resolved_keys = a.reads;
      if (a.has_target &&
          std::find(v.rec.resolved_keys.begin(), v.rec.resolved_keys.end(), a.target) ==
              v.rec.resolved_keys.end())
        v.rec.resolved_keys.push_back(a.target);
    }
  }

  enum class WaitReason : std::uint8_t { None, Dependency, Sibling };

  // Moves a claimed vertex into EXE. A signal thread may flip BLK to RDY
  // (T1) concurrently with a not-blocked-anymore execution, so the CAS
  // sequence retries until one path lands: T1+T2 when dependencies had
  // resolved, T3 when the execution was genuinely speculative.
  void enter_exe(std::uint32_t vi, bool blocked, ExecStats& st) {
    TPGVertex& v = tpg.vertex(vi);
    if (!blocked || v.unresolved.load(std::memory_order_acquire) == 0)
      transition(vi, FsmState::BLK, FsmState::RDY, false, &st);  // T1 (no-op if already RDY)
    for (;;) {
      if (transition(vi, FsmState::RDY, FsmState::EXE, false, &st)) return;  // T2
      if (transition(vi, FsmState::BLK, FsmState::EXE, false, &st)) return;  // T3
    }
  }

  ExecOutcome execute_vertex(std::uint32_t vi, std::size_t tid, bool allow_speculation,
                             WaitReason* why = nullptr) {
    ExecStats& st = thread_stats[tid];
    TPGVertex& v = tpg.vertex(vi);
    if (why) *why = WaitReason::None;

    Clock::time_point t0 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
    std::shared_lock guard(exec_lock);
    if (opt.collect_breakdown) st.breakdown.lock += ns_since(t0);

    FsmState s = v.fsm.load(std::memory_order_acquire);
    if (s == FsmState::ABT || s == FsmState::EXE) return ExecOutcome::Skipped;
    if (v.fail_pending.load(std::memory_order_acquire)) return ExecOutcome::Skipped;

    bool blocked = v.unresolved.load(std::memory_order_acquire) > 0;
    if (blocked && !(allow_speculation && speculation)) {
      if (why) *why = WaitReason::Dependency;
      return ExecOutcome::NotReady;
    }

    std::uint8_t claim_expected = 0;
    if (!v.claim.compare_exchange_strong(claim_expected, 1)) return ExecOutcome::Skipped;
    auto release = [&] { v.claim.store(0, std::memory_order_release); };

    Clock::time_point t1 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
    ResolvedAccess access = resolve_access(v.op);

    // Readiness is decided here, not by the store: every read must be
    // governed by a committed version. The unresolved counter alone is not
    // enough — an aborted operation resolves its dependents while its own
    // parents may still be pending.
    bool governors_ok = true;
    if (access.window) {
      for (Key k : access.reads)
        if (!range_settled(k, access.window_lo, access.window_hi)) {
          governors_ok = false;
          break;
        }
    } else {
      for (Key k : access.reads)
        if (buffered_writer(v, k) < 0 && !governor_settled(k, v.op.txn_ts)) {
          governors_ok = false;
          break;
        }
    }
    if (opt.collect_breakdown) st.breakdown.explore += ns_since(t1);
    if (!governors_ok) {
      release();
      if (why) *why = WaitReason::Dependency;
      return ExecOutcome::NotReady;
    }

    Clock::time_point t2 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
    GatherResult reads = gather_reads(v, access);
    if (!reads.ready) {
      release();
      if (opt.collect_breakdown) st.breakdown.useful += ns_since(t2);
      if (why) *why = WaitReason::Sibling;
      return ExecOutcome::NotReady;
    }

    if (v.op.cond_fn.valid()) {
      busy_wait_us(v.op.cond_fn.cost_us);
      UdfContext ctx{reads.values, v.op.args};
      if (!reg.condition_fn(v.op.cond_fn)(ctx)) {
        v.rec.clear();
        v.rec.reads = std::move(reads.provenance);
        v.rec.read_values = std::move(reads.values);
        v.rec.exec_thread = static_cast<std::uint32_t>(tid);
        record_resolution(v, access);
        if (opt.collect_breakdown) st.breakdown.useful += ns_since(t2);
        if (decision.abort == AbortKind::LAZY) {
          // Log the failure and mark the vertex executed without writing;
          // abort handling runs once the whole TPG has been explored.
          v.fail_logged.store(true, std::memory_order_release);
          enter_exe(vi, blocked, st);
          {
            std::scoped_lock lk(lazy_mu);
            lazy_logged.push_back(vi);
          }
          if (exec_count[vi].fetch_add(1) > 0) ++st.redone;
          ++st.executed;
          on_settled(vi);
          signal_children(vi, &st);
          if (decision.explore == ExploreKind::NS) wake_unit_at(vi);
          return ExecOutcome::Ok;
        }
        v.fail_pending.store(true, std::memory_order_release);
        if (structured()) stratum_stalled[v.stratum].fetch_add(1);
        return ExecOutcome::Failed;
      }
    }

    Value out = 0;
    bool has_out = false;
    if (v.op.value_fn.valid()) {
      busy_wait_us(v.op.value_fn.cost_us);
      if (v.op.value_fn.kind == FunctionKind::WindowAggregate) {
        out = reg.window_fn(v.op.value_fn)(reads.values);
      } else {
        UdfContext ctx{reads.values, v.op.args};
        out = reg.value_fn(v.op.value_fn)(ctx);
      }
      has_out = true;
    } else if (!reads.values.empty()) {
      out = reads.values.front();
      has_out = true;
    }

    v.rec.clear();
    v.rec.reads = std::move(reads.provenance);
    v.rec.read_values = std::move(reads.values);
    v.rec.output = out;
    v.rec.has_output = has_out;
    v.rec.exec_thread = static_cast<std::uint32_t>(tid);
    record_resolution(v, access);

    if (v.op.kind == OpKind::Write && access.has_target) {
      table.write_version(access.target, v.op.txn_ts, out, vi);
      v.rec.writes.emplace_back(access.target, v.op.txn_ts);
    }
    if (opt.collect_breakdown) st.breakdown.useful += ns_since(t2);

    enter_exe(vi, blocked, st);
    if (exec_count[vi].fetch_add(1) > 0) ++st.redone;
    ++st.executed;
    on_settled(vi);
    signal_children(vi, &st);
    if (decision.explore == ExploreKind::NS) wake_unit_at(vi);
    return ExecOutcome::Ok;
  }

  // --- failure routing ---------------------------------------------------------

  // The thread that processed a transaction's head operation coordinates
  // its abort; fall back to the detecting thread when the head has not
  // executed yet.
  void report_failure(std::uint32_t vi, std::size_t tid) {
    std::size_t coordinator = tid;
    const auto& members = tpg.txn_vertices(tpg.vertex(vi).op.txn_ts);
    if (!members.empty()) {
      const TPGVertex& head = tpg.vertex(members.front());
      if (head.fsm.load(std::memory_order_acquire) == FsmState::EXE)
        coordinator = head.rec.exec_thread % opt.threads;
    }
    Inbox& box = inboxes[coordinator];
    std::scoped_lock lk(box.mu);
    box.items.push_back(vi);
  }

  bool drain_inbox(std::size_t tid) {
    std::vector<std::uint32_t> items;
    {
      Inbox& box = inboxes[tid];
      std::scoped_lock lk(box.mu);
      if (box.items.empty()) return false;
      // Captured but unprocessed failures must keep the batch alive.
      aborts_inflight.fetch_add(1, std::memory_order_acq_rel);
      items.swap(box.items);
    }
    process_aborts(std::move(items), tid, nullptr);
    aborts_inflight.fetch_sub(1, std::memory_order_acq_rel);
    return true;
  }

  bool any_inbox_nonempty() {
    for (std::size_t t = 0; t < inbox_count; ++t) {
      std::scoped_lock lk(inboxes[t].mu);
      if (!inboxes[t].items.empty()) return true;
    }
    return false;
  }

  // --- abort processing ----------------------------------------------------------

  struct AbortOutcome {
    std::uint32_t min_stratum = ~0u;
    bool any = false;
  };

  // Replays an aborted transaction against the current table state after a
  // cascade invalidated some of its recorded reads. The abort must still
  // hold (ABT is terminal); the supported workloads decide aborts on
  // conditions that a rollback cannot flip, so a flip is a fatal defect.
  void revalidate_aborted_txn(Timestamp ts) {
    std::vector<std::pair<Key, Value>> sim_buffer;
    auto sim_read = [&](Key k) -> std::pair<Value, Timestamp> {
      for (auto it = sim_buffer.rbegin(); it != sim_buffer.rend(); ++it)
        if (it->first == k) return {it->second, ts};
      Version ver = table.read_version(k, ts);
      return {ver.value, ver.ts};
    };
    const auto& members = tpg.txn_vertices(ts);
    for (std::size_t idx = 0; idx < members.size(); ++idx) {
      std::uint32_t mi = members[idx];
      TPGVertex& m = tpg.vertex(mi);
      ResolvedAccess a = resolve_access(m.op);
      std::vector<Value> values;
      std::vector<std::pair<Key, Timestamp>> prov;
      if (a.window) {
        auto per_key = table.window_read(a.reads, a.window_hi, a.window_hi - a.window_lo);
        for (std::size_t i = 0; i < per_key.size(); ++i)
          for (const Version& ver : per_key[i]) {
            values.push_back(ver.value);
            prov.emplace_back(a.reads[i], ver.ts);
          }
      } else {
        for (Key k : a.reads) {
          auto [val, vts] = sim_read(k);
          values.push_back(val);
          prov.emplace_back(k, vts);
        }
      }
      m.rec.reads = prov;
      m.rec.read_values = values;
      if (m.op.cond_fn.valid()) {
        UdfContext ctx{values, m.op.args};
        if (!reg.condition_fn(m.op.cond_fn)(ctx)) {
          // Still aborts here; statements past the failing guard never ran.
          for (std::size_t rest = idx + 1; rest < members.size(); ++rest) {
            TPGVertex& r = tpg.vertex(members[rest]);
            r.rec.reads.clear();
            r.rec.read_values.clear();
          }
          return;
        }
      }
      if (m.op.kind == OpKind::Write && a.has_target) {
        Value out = 0;
        if (m.op.value_fn.valid()) {
          if (m.op.value_fn.kind == FunctionKind::WindowAggregate)
            out = reg.window_fn(m.op.value_fn)(values);
          else {
            UdfContext ctx{values, m.op.args};
            out = reg.value_fn(m.op.value_fn)(ctx);
          }
        }
        sim_buffer.emplace_back(a.target, out);
      }
    }
    throw EngineError("abort decision of txn " + std::to_string(ts) +
                      " was invalidated by a rollback cascade and would now commit; aborted "
                      "operations cannot be resurrected");
  }

  // Aborts the whole transactions of the failed vertices (LD closure),
  // truncates their versions and rolls back dependents transitively. Runs
  // under the exclusive lock; failures are handled in timestamp order so a
  // cascade can void a later, not-yet-processed failure.
  void process_aborts(std::vector<std::uint32_t> failures, std::size_t tid,
                      AbortOutcome* outcome) {
    ExecStats& st = thread_stats[tid];
    Clock::time_point t0 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
    std::unique_lock guard(exec_lock);
    ++st.abort_rounds;

    std::sort(failures.begin(), failures.end(), [&](std::uint32_t a, std::uint32_t b) {
      return std::make_pair(tpg.vertex(a).op.txn_ts, a) < std::make_pair(tpg.vertex(b).op.txn_ts, b);
    });
    failures.erase(std::unique(failures.begin(), failures.end()), failures.end());

    std::set<std::uint32_t> affected_units;
    AbortOutcome local;

    for (std::uint32_t fv : failures) {
      TPGVertex& f = tpg.vertex(fv);
      bool was_pending = f.fail_pending.exchange(false);
      if (was_pending && structured()) stratum_stalled[f.stratum].fetch_sub(1);
      if (f.fsm.load() == FsmState::ABT) continue;
      if (eager() && !was_pending) continue;              // failure voided by a cascade
      if (!eager() && !f.fail_logged.load()) continue;    // rolled back before processing

      Timestamp ts = f.op.txn_ts;
      std::vector<std::uint32_t> members;
      if (opt.faults.skip_ld_closure)
        members.push_back(fv);
      else
        members = tpg.txn_vertices(ts);

      std::vector<std::pair<Key, Timestamp>> to_truncate;
      std::vector<Key> touched;
      for (std::uint32_t mi : members) {
        TPGVertex& m = tpg.vertex(mi);
        FsmState old = m.fsm.load();
        if (old == FsmState::ABT) continue;
        force_abort(mi);  // T4
        local.any = true;
        local.min_stratum = std::min(local.min_stratum, m.stratum);
        if (vertex_unit[mi] != ~0u) affected_units.insert(vertex_unit[mi]);
        bool m_pending = m.fail_pending.exchange(false);
        if (m_pending && structured()) stratum_stalled[m.stratum].fetch_sub(1);
        m.fail_logged.store(false);
        if (old != FsmState::EXE) {
          on_settled(mi);
          signal_children(mi, &st);
        }
        for (const auto& [wk, wts] : m.rec.writes) {
          if (!opt.faults.skip_truncation) to_truncate.emplace_back(wk, wts);
          if (std::find(touched.begin(), touched.end(), wk) == touched.end())
            touched.push_back(wk);
        }
      }
      aborted_set.insert(ts);
      aborted.push_back(ts);

      cascade(std::move(to_truncate), affected_units, local, st);
      trunc_log.emplace_back(ts, std::move(touched));
    }

    // Wake every unit whose members were aborted or rolled back.
    for (std::uint32_t u : affected_units) {
      if (u == ~0u) continue;
      if (units[u].state.load() == 2 &&
          units[u].cursor.load() < units[u].members.size())
        units[u].state.store(0);
      if (decision.explore == ExploreKind::NS) enqueue_unit_if_idle(u);
    }
    if (outcome) *outcome = local;
    if (opt.collect_breakdown) st.breakdown.abort += ns_since(t0);
  }

  void cascade(std::vector<std::pair<Key, Timestamp>> pending,
               std::set<std::uint32_t>& affected_units, AbortOutcome& out, ExecStats& st) {
    while (!pending.empty()) {
      std::vector<std::pair<Key, Timestamp>> batch;
      batch.swap(pending);
      // Per removed key, the lowest removed timestamp: a reader consumed a
      // removed version iff its recorded (key, ts) lies in the removed
      // range, since truncation removes every version from ts upward.
      std::map<Key, Timestamp> removed_low;
      bool removed_any = false;
      for (const auto& [key, ts] : batch) {
        for (const Version& ver : table.truncate_after(key, ts)) {
          removed_any = true;
          auto [it, inserted] = removed_low.try_emplace(key, ver.ts);
          if (!inserted) it->second = std::min(it->second, ver.ts);
          // Writers of collaterally removed versions roll back and redo.
          if (ver.writer != kInvalidOp && !opt.faults.skip_rollback_cascade) {
            TPGVertex& w = tpg.vertex(ver.writer);
            if (w.fsm.load() == FsmState::EXE)
              rollback_vertex(ver.writer, pending, affected_units, out, st);
          }
        }
      }
      if (!removed_any || opt.faults.skip_rollback_cascade) continue;

      // Consumers of removed versions re-execute; aborted transactions that
      // consumed one are re-validated; pending failure decisions that
      // consumed one are voided.
      std::vector<Timestamp> revalidate;
      for (std::uint32_t vi : subset) {
        TPGVertex& v = tpg.vertex(vi);
        FsmState s = v.fsm.load();
        bool pending_failure = v.fail_pending.load();
        if (s != FsmState::EXE && s != FsmState::ABT && !pending_failure) continue;
        bool hit = false;
        for (const auto& [rk, rts] : v.rec.reads) {
          auto it = removed_low.find(rk);
          if (it != removed_low.end() && rts >= it->second) {
            hit = true;
            break;
          }
        }
        if (!hit) continue;
        if (pending_failure) {
          void_failure(vi, pending, affected_units, out, st, revalidate);
        } else if (s == FsmState::EXE) {
          rollback_vertex(vi, pending, affected_units, out, st);
        } else {
          revalidate.push_back(v.op.txn_ts);
        }
      }
      std::sort(revalidate.begin(), revalidate.end());
      revalidate.erase(std::unique(revalidate.begin(), revalidate.end()), revalidate.end());
      for (Timestamp ts : revalidate) revalidate_aborted_txn(ts);
    }
  }

  // A pending failure whose decision-time reads were truncated is void:
  // the operation returns to normal scheduling and may now commit its
  // write. Readers that skipped the doomed entry must re-execute once the
  // write can land.
  void void_failure(std::uint32_t vi, std::vector<std::pair<Key, Timestamp>>& pending,
                    std::set<std::uint32_t>& affected_units, AbortOutcome& out, ExecStats& st,
                    std::vector<Timestamp>& revalidate) {
    TPGVertex& v = tpg.vertex(vi);
    v.fail_pending.store(false);
    if (structured()) stratum_stalled[v.stratum].fetch_sub(1);
    v.rec.clear();
    v.claim.store(0, std::memory_order_release);
    v.needs_redo.store(true);
    if (v.unresolved.load() == 0) dispatch_ready(vi);
    if (vertex_unit[vi] != ~0u) {
      affected_units.insert(vertex_unit[vi]);
      rewind_unit(vertex_unit[vi], vertex_unit_pos[vi]);
    }
    out.any = true;
    out.min_stratum = std::min(out.min_stratum, v.stratum);

    if (v.op.kind != OpKind::Write) return;
    ResolvedAccess access = resolve_access(v.op);
    if (!access.has_target) return;
    Key target = access.target;
    for (std::uint32_t ri : subset) {
      if (ri == vi) continue;
      TPGVertex& r = tpg.vertex(ri);
      FsmState rs = r.fsm.load();
      if (rs != FsmState::EXE && rs != FsmState::ABT) continue;
      bool stale = false;
      for (const auto& [rk, rts] : r.rec.reads) {
        if (rk != target) continue;
        if ((rts < v.op.txn_ts && r.op.txn_ts > v.op.txn_ts) ||
            (r.op.txn_ts == v.op.txn_ts && r.op.stmt_idx > v.op.stmt_idx)) {
          stale = true;
          break;
        }
      }
      if (!stale) continue;
      if (rs == FsmState::EXE)
        rollback_vertex(ri, pending, affected_units, out, st);
      else
        revalidate.push_back(r.op.txn_ts);
    }
  }

  void rewind_unit(std::uint32_t u, std::uint32_t pos) {
    SchedulingUnit& unit = units[u];
    std::uint32_t cur = unit.cursor.load();
    while (pos < cur && !unit.cursor.compare_exchange_weak(cur, pos)) {
    }
    if (unit.state.load() == 2) unit.state.store(0);
  }

  // T5/T6: undoes one executed vertex. Its versions join the truncation
  // worklist; its children regain an unresolved parent.
  void rollback_vertex(std::uint32_t vi, std::vector<std::pair<Key, Timestamp>>& pending,
                       std::set<std::uint32_t>& affected_units, AbortOutcome& out,
                       ExecStats& st) {
    TPGVertex& v = tpg.vertex(vi);
    if (v.fsm.load() != FsmState::EXE) return;

    for (const auto& [wk, wts] : v.rec.writes) pending.emplace_back(wk, wts);

    for (const DepEdge& e : v.out) {
      if (e.cls == DependencyClass::LD) continue;
      TPGVertex& w = tpg.vertex(e.vertex);
      if (w.fsm.load() == FsmState::ABT) continue;
      w.unresolved.fetch_add(1, std::memory_order_acq_rel);
      if (w.fsm.load() == FsmState::RDY)
        transition(e.vertex, FsmState::RDY, FsmState::BLK, true, &st);  // T6
    }

    v.rec.clear();
    v.fail_logged.store(false);
    v.claim.store(0, std::memory_order_release);
    bool ready = v.unresolved.load(std::memory_order_acquire) == 0;
    if (ready)
      transition(vi, FsmState::EXE, FsmState::RDY, true, &st);  // T5
    else
      transition(vi, FsmState::EXE, FsmState::BLK, true, &st);  // T6
    on_unsettled(vi);
    v.needs_redo.store(true);
    if (ready) dispatch_ready(vi);

    out.any = true;
    out.min_stratum = std::min(out.min_stratum, v.stratum);
    if (vertex_unit[vi] != ~0u) {
      affected_units.insert(vertex_unit[vi]);
      rewind_unit(vertex_unit[vi], vertex_unit_pos[vi]);
    }
  }

  // Once the whole TPG is explored, aborts the logged failures and their
  // cascades; exploration then resumes over the rolled-back subgraph.
  bool finish_lazy(std::size_t tid, AbortOutcome* outcome) {
    std::vector<std::uint32_t> logged;
    {
      std::scoped_lock lk(lazy_mu);
      logged.swap(lazy_logged);
    }
    if (logged.empty()) return false;
    if (lazy_rounds.fetch_add(1) > subset.size() + 2)
      throw EngineError("lazy abort handling is not converging (livelock)");
    process_aborts(std::move(logged), tid, outcome);
    return true;
  }

  // --- worker loops ---------------------------------------------------------------

  void set_fatal(const std::string& msg) {
    {
      std::scoped_lock lk(fatal_mu);
      if (fatal_message.empty()) fatal_message = msg;
    }
    fatal.store(true);
    done.store(true);
  }

  void check_deadlock(Clock::time_point& last_seen, std::uint64_t& last_progress) {
    std::uint64_t p = progress.load(std::memory_order_relaxed);
    if (p != last_progress) {
      last_progress = p;
      last_seen = Clock::now();
      return;
    }
    if (Clock::now() - last_seen < std::chrono::seconds(5)) return;
    std::ostringstream os;
    os << "no progress with " << remaining.load() << " pending vertices;";
    if (structured()) {
      os << " cur_stratum=" << cur_stratum.load() << " max=" << max_stratum << " pend/stall:";
      for (std::uint32_t s2 = 0; s2 <= max_stratum; ++s2) {
        std::int64_t p = stratum_pending[s2].load();
        std::int64_t st2 = stratum_stalled[s2].load();
        if (p != 0 || st2 != 0) os << ' ' << s2 << ':' << p << '/' << st2;
      }
    }
    {
      std::scoped_lock lk(redo_mu);
      os << " redo=" << redo_pool.size();
    }
    os << " pending:";
    int shown = 0;
    for (std::uint32_t vi : subset) {
      const TPGVertex& v = tpg.vertex(vi);
      FsmState s = v.fsm.load();
      if (s == FsmState::EXE || s == FsmState::ABT) continue;
      if (++shown > 8) {
        os << " ...";
        break;
      }
      os << " [op" << vi << " ts" << v.op.txn_ts << '.' << v.op.stmt_idx << ' ' << to_string(s)
         << " str=" << v.stratum << " unresolved=" << v.unresolved.load()
         << " claim=" << int(v.claim.load()) << " redo=" << v.needs_redo.load();
      try {
        ResolvedAccess a = resolve_access(v.op);
        for (Key k : a.reads) {
          os << " k" << k << ':';
          std::int64_t sib = buffered_writer(v, k);
          if (sib >= 0) os << "sib" << sib << '=' << to_string(tpg.vertex(sib).fsm.load()) << ' ';
          const auto& entries = tpg.list(k).entries();
          auto it = std::lower_bound(entries.begin(), entries.end(), v.op.txn_ts,
                                     [](const ListEntry& e, Timestamp t) { return e.ts < t; });
          int depth = 0;
          while (it != entries.begin() && depth < 3) {
            --it;
            ++depth;
            const TPGVertex& u = tpg.vertex(it->vertex);
            os << "(op" << it->vertex << " ts" << it->ts << ' '
               << (it->mode == AccessMode::Read ? 'R' : it->mode == AccessMode::Write ? 'W' : 'P')
               << (it->is_virtual ? "v" : "") << ' ' << to_string(u.fsm.load()) << " w="
               << u.rec.writes.size() << " fp=" << u.fail_pending.load() << " fl="
               << u.fail_logged.load() << ')';
          }
        }
      } catch (...) {
      }
      os << ']';
    }
    set_fatal(os.str());
  }

  bool handle_failure(std::uint32_t vi, std::size_t tid) {
    if (decision.explore == ExploreKind::NS) {
      report_failure(vi, tid);
      return true;
    }
    if (dfs()) {
      AbortOutcome out;
      process_aborts({vi}, tid, &out);
      return true;
    }
    return true;  // BFS: the stratum leader collects stalled failures
  }

  bool run_unit(std::uint32_t ui, std::size_t tid) {
    SchedulingUnit& unit = units[ui];
    bool did_work = false;
    for (;;) {
      std::uint32_t i = unit.cursor.load(std::memory_order_acquire);
      if (i >= unit.members.size()) {
        unit.state.store(2);
        return did_work;
      }
      std::uint32_t vi = unit.members[i];
      TPGVertex& v = tpg.vertex(vi);
      FsmState s = v.fsm.load(std::memory_order_acquire);
      if (s == FsmState::EXE || s == FsmState::ABT) {
        unit.cursor.compare_exchange_strong(i, i + 1);
        continue;
      }
      ExecOutcome o = execute_vertex(vi, tid, true);
      if (o == ExecOutcome::Ok) {
        did_work = true;
        unit.cursor.compare_exchange_strong(i, i + 1);
        continue;
      }
      if (o == ExecOutcome::Failed) {
        did_work = true;
        handle_failure(vi, tid);
        unit.state.store(0);
        return did_work;
      }
      // NotReady or Skipped: park the unit and double-check for a racing
      // wakeup.
      unit.state.store(0);
      if (v.unresolved.load(std::memory_order_acquire) == 0 &&
          v.fsm.load(std::memory_order_acquire) == FsmState::RDY)
        enqueue_unit_if_idle(ui);
      return did_work;
    }
  }

  // Retries intra-transaction sibling waits parked by this thread; the
  // sibling may have landed meanwhile. Returns true when an item settled.
  bool service_deferred(std::vector<std::uint32_t>* deferred, std::size_t tid) {
    if (!deferred || deferred->empty()) return false;
    bool any = false;
    std::vector<std::uint32_t> still;
    for (std::uint32_t vi : *deferred) {
      ExecOutcome o = execute_vertex(vi, tid, true);
      if (o == ExecOutcome::Failed) {
        handle_failure(vi, tid);
        any = true;
      } else if (o == ExecOutcome::NotReady) {
        still.push_back(vi);
      } else {
        any = true;
      }
    }
    deferred->swap(still);
    return any;
  }

  // Lost-wakeup recovery: an idle worker executes any runnable vertex the
  // unit machinery dropped (cursor races with abort rewinds are possible).
  // Claims and the FSM make duplicate attempts harmless.
  bool sweep_stalled(std::size_t tid, std::uint32_t stratum_limit = ~0u) {
    bool any = false;
    for (std::uint32_t vi : subset) {
      TPGVertex& v = tpg.vertex(vi);
      FsmState s = v.fsm.load(std::memory_order_acquire);
      if (s == FsmState::EXE || s == FsmState::ABT) continue;
      if (v.fail_pending.load(std::memory_order_acquire)) continue;
      if (v.stratum > stratum_limit) continue;
      ExecOutcome o = execute_vertex(vi, tid, true);
      if (o == ExecOutcome::Ok) {
        any = true;
      } else if (o == ExecOutcome::Failed) {
        handle_failure(vi, tid);
        any = true;
      }
    }
    return any;
  }

  bool service_redo(std::size_t tid) {
    std::uint32_t vi = ~0u;
    {
      std::scoped_lock lk(redo_mu);
      if (!redo_pool.empty()) {
        vi = redo_pool.front();
        redo_pool.pop_front();
      }
    }
    if (vi == ~0u) return false;
    ExecOutcome o = execute_vertex(vi, tid, true);
    if (o == ExecOutcome::Failed) {
      handle_failure(vi, tid);
    } else if (o == ExecOutcome::NotReady) {
      TPGVertex& v = tpg.vertex(vi);
      v.needs_redo.store(true);
      if (v.unresolved.load(std::memory_order_acquire) == 0) dispatch_ready(vi);
      std::this_thread::yield();
    }
    return true;
  }

  void ns_worker(std::size_t tid) {
    Clock::time_point last_seen = Clock::now();
    std::uint64_t last_progress = ~0ull;
    std::size_t spec_scan = tid;
    std::uint64_t idle_spins = 0;
    while (!done.load(std::memory_order_acquire)) {
      if (eager() && drain_inbox(tid)) continue;
      if (service_redo(tid)) continue;

      std::uint32_t ui = ~0u;
      {
        std::scoped_lock lk(pool_mu);
        if (!ready_pool.empty()) {
          ui = ready_pool.front();
          ready_pool.pop_front();
        }
      }
      if (ui != ~0u) {
        run_unit(ui, tid);
        continue;
      }

      if (remaining.load(std::memory_order_acquire) == 0 &&
          aborts_inflight.load(std::memory_order_acquire) == 0) {
        if (eager()) {
          if (any_inbox_nonempty()) continue;
          if (remaining.load(std::memory_order_acquire) != 0) continue;
          done.store(true);
          return;
        }
        std::scoped_lock fin(finish_mu);
        if (remaining.load() != 0 || aborts_inflight.load() != 0) continue;
        if (!finish_lazy(tid, nullptr)) {
          done.store(true);
          return;
        }
        continue;
      }

      if (speculation && speculate_scan(spec_scan, tid)) continue;

      if (++idle_spins % 128 == 0 && sweep_stalled(tid)) {
        idle_spins = 0;
        continue;
      }
      if (idle_spins > 32)
        std::this_thread::sleep_for(std::chrono::microseconds(std::min<std::uint64_t>(idle_spins, 200)));
      else
        std::this_thread::yield();
      check_deadlock(last_seen, last_progress);
    }
  }

  // Picks a parked unit whose next member is blocked but whose governing
  // versions are committed, and runs it ahead of its signals (T3).
  bool speculate_scan(std::size_t& scan_pos, std::size_t tid) {
    if (units.empty()) return false;
    std::size_t budget = std::min<std::size_t>(units.size(), 64);
    for (std::size_t step = 0; step < budget; ++step) {
      std::uint32_t ui = static_cast<std::uint32_t>((scan_pos + step) % units.size());
      SchedulingUnit& unit = units[ui];
      if (unit.state.load(std::memory_order_acquire) != 0) continue;
      std::uint32_t i = unit.cursor.load(std::memory_order_acquire);
      if (i >= unit.members.size()) continue;
      if (tpg.vertex(unit.members[i]).fsm.load(std::memory_order_acquire) != FsmState::BLK)
        continue;
      std::uint8_t expected = 0;
      if (!unit.state.compare_exchange_strong(expected, 1)) continue;
      bool worked = run_unit(ui, tid);
      scan_pos = ui + 1;
      if (worked) return true;
    }
    scan_pos += budget;
    return false;
  }

  // BFS: lock-step strata with a shared pool per stratum; failures are
  // handled by the barrier leader, restarting from the outermost affected
  // stratum.
  void bfs_worker(std::size_t tid) {
    Clock::time_point last_seen = Clock::now();
    std::uint64_t last_progress = ~0ull;
    while (!done.load(std::memory_order_acquire)) {
      std::uint32_t s = cur_stratum.load(std::memory_order_acquire);
      if (s > max_stratum) {
        barrier->arrive_and_wait([&] { end_of_strata_leader(tid); });
        continue;
      }
      auto& segs = seg_by_stratum[s];
      for (;;) {
        std::size_t i = seg_cursor[s].fetch_add(1, std::memory_order_acq_rel);
        if (i >= segs.size()) break;
        exec_segment(segs[i].members, s, tid, false);
      }
      drain_stratum(s, tid, last_seen, last_progress);
      if (done.load(std::memory_order_acquire)) return;
      barrier->arrive_and_wait([&] { stratum_leader(s, tid); });
    }
  }

  // DFS: every thread walks its pre-assigned segments stratum by stratum
  // without barriers, waiting inline (or speculating) on unresolved
  // dependencies, then joins the drain phase. Intra-transaction sibling
  // waits are deferred instead of waited on: the sibling may sit later in
  // this very thread's plan.
  void dfs_worker(std::size_t tid) {
    std::vector<std::uint32_t> deferred;
    for (std::uint32_t s = 0; s <= max_stratum && !done.load(std::memory_order_acquire); ++s)
      for (std::uint32_t seg : dfs_plan[tid][s]) {
        exec_segment(seg_by_stratum[s][seg].members, s, tid, true, &deferred);
        if (done.load(std::memory_order_acquire)) return;
      }

    Clock::time_point last_seen = Clock::now();
    std::uint64_t last_progress = ~0ull;
    while (!deferred.empty() && !done.load(std::memory_order_acquire)) {
      std::vector<std::uint32_t> still;
      for (std::uint32_t vi : deferred) {
        ExecOutcome o = execute_vertex(vi, tid, true);
        if (o == ExecOutcome::Failed)
          handle_failure(vi, tid);
        else if (o == ExecOutcome::NotReady)
          still.push_back(vi);
      }
      if (still.size() == deferred.size()) {
        if (!service_redo(tid)) std::this_thread::yield();
        check_deadlock(last_seen, last_progress);
      }
      deferred.swap(still);
    }

    dfs_finished.fetch_add(1);
    last_seen = Clock::now();
    last_progress = ~0ull;
    std::uint64_t idle_spins = 0;
    while (!done.load(std::memory_order_acquire)) {
      if (service_redo(tid)) continue;
      if (++idle_spins % 128 == 0 && sweep_stalled(tid)) continue;
      if (remaining.load(std::memory_order_acquire) == 0 &&
          aborts_inflight.load(std::memory_order_acquire) == 0 &&
          dfs_finished.load() == opt.threads) {
        std::scoped_lock fin(finish_mu);
        if (remaining.load() != 0 || aborts_inflight.load() != 0) continue;
        if (decision.abort == AbortKind::LAZY && finish_lazy(tid, nullptr)) continue;
        done.store(true);
        return;
      }
      std::this_thread::yield();
      check_deadlock(last_seen, last_progress);
    }
  }

  void exec_segment(const std::vector<std::uint32_t>& members, std::uint32_t s, std::size_t tid,
                    bool inline_wait, std::vector<std::uint32_t>* deferred = nullptr) {
    for (std::uint32_t vi : members) {
      TPGVertex& v = tpg.vertex(vi);
      FsmState st = v.fsm.load(std::memory_order_acquire);
      if (st == FsmState::EXE || st == FsmState::ABT) continue;
      WaitReason why = WaitReason::None;
      ExecOutcome o = execute_vertex(vi, tid, inline_wait, &why);
      if (o == ExecOutcome::Ok || o == ExecOutcome::Skipped) continue;
      if (o == ExecOutcome::Failed) {
        handle_failure(vi, tid);
        continue;
      }
      // NotReady.
      if (!inline_wait) {
        std::scoped_lock lk(retry_mu[s]);
        retry[s].push_back(vi);
        continue;
      }
      if (why == WaitReason::Sibling && deferred) {
        deferred->push_back(vi);
        continue;
      }
      // DFS advances only once this operation's dependencies resolve; keep
      // servicing redo work while waiting.
      Clock::time_point seen = Clock::now();
      std::uint64_t prog = ~0ull;
      Clock::time_point w0 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
      for (;;) {
        FsmState cur = v.fsm.load(std::memory_order_acquire);
        if (cur == FsmState::EXE || cur == FsmState::ABT) break;
        ExecOutcome r = execute_vertex(vi, tid, true, &why);
        if (r == ExecOutcome::Ok || r == ExecOutcome::Skipped) break;
        if (r == ExecOutcome::Failed) {
          handle_failure(vi, tid);
          break;
        }
        if (why == WaitReason::Sibling && deferred) {
          deferred->push_back(vi);
          break;
        }
        if (!service_redo(tid) && !service_deferred(deferred, tid)) std::this_thread::yield();
        check_deadlock(seen, prog);
        if (done.load(std::memory_order_acquire)) return;
      }
      if (opt.collect_breakdown) thread_stats[tid].breakdown.sync += ns_since(w0);
    }
  }

  // Waits until every vertex of the stratum is settled or stalled on a
  // pending failure, retrying parked vertices.
  void drain_stratum(std::uint32_t s, std::size_t tid, Clock::time_point& last_seen,
                     std::uint64_t& last_progress) {
    Clock::time_point w0 = opt.collect_breakdown ? Clock::now() : Clock::time_point{};
    std::uint64_t idle_spins = 0;
    for (;;) {
      if (done.load(std::memory_order_acquire)) return;
      if (stratum_pending[s].load(std::memory_order_acquire) <=
          stratum_stalled[s].load(std::memory_order_acquire))
        break;
      std::uint32_t vi = ~0u;
      {
        std::scoped_lock lk(retry_mu[s]);
        if (!retry[s].empty()) {
          vi = retry[s].back();
          retry[s].pop_back();
        }
      }
      if (vi != ~0u) {
        ExecOutcome o = execute_vertex(vi, tid, false);
        if (o == ExecOutcome::NotReady) {
          std::scoped_lock lk(retry_mu[s]);
          retry[s].push_back(vi);
          std::this_thread::yield();
        }
        continue;
      }
      if (service_redo(tid)) continue;
      if (++idle_spins % 128 == 0 && sweep_stalled(tid, s)) continue;
      std::this_thread::yield();
      check_deadlock(last_seen, last_progress);
    }
    if (opt.collect_breakdown) thread_stats[tid].breakdown.sync += ns_since(w0);
  }

  void stratum_leader(std::uint32_t s, std::size_t tid) {
    std::vector<std::uint32_t> failures;
    for (std::uint32_t vi : subset)
      if (tpg.vertex(vi).fail_pending.load()) failures.push_back(vi);

    AbortOutcome out;
    if (!failures.empty()) {
      process_aborts(std::move(failures), tid, &out);
      if (out.any && out.min_stratum <= s) {
        restart_from(out.min_stratum);
        return;
      }
    }
    if (stratum_pending[s].load() > 0) {
      restart_from(s);  // rolled-back vertices landed back in this stratum
      return;
    }
    cur_stratum.store(s + 1, std::memory_order_release);
  }

  void end_of_strata_leader(std::size_t tid) {
    if (decision.abort == AbortKind::LAZY) {
      AbortOutcome out;
      if (finish_lazy(tid, &out)) {
        restart_from(out.any && out.min_stratum != ~0u ? out.min_stratum : 0);
        return;
      }
    }
    if (remaining.load() != 0) {
      for (std::uint32_t s2 = 0; s2 <= max_stratum; ++s2)
        if (stratum_pending[s2].load() > 0) {
          restart_from(s2);
          return;
        }
    }
    done.store(true);
  }

  void restart_from(std::uint32_t target) {
    for (std::uint32_t i = target; i <= max_stratum; ++i)
      seg_cursor[i].store(0, std::memory_order_release);
    cur_stratum.store(target, std::memory_order_release);
  }

  // --- entry --------------------------------------------------------------------

  ExecStats run() {
    build_units();
    remaining.store(static_cast<std::int64_t>(subset.size()));
    if (subset.empty()) return merge_stats();

    inboxes = std::make_unique<Inbox[]>(opt.threads);
    inbox_count = opt.threads;
    if (structured()) barrier = std::make_unique<SpinBarrier>(opt.threads);

    // Seed readiness: T1 for every vertex without TD/PD parents.
    for (std::uint32_t vi : subset)
      if (tpg.vertex(vi).unresolved.load() == 0)
        transition(vi, FsmState::BLK, FsmState::RDY, false, &thread_stats[0]);
    if (decision.explore == ExploreKind::NS) {
      for (std::uint32_t u = 0; u < units.size(); ++u) {
        if (units[u].members.empty()) {
          units[u].state.store(2);
          continue;
        }
        if (tpg.vertex(units[u].members[0]).unresolved.load() == 0) enqueue_unit_if_idle(u);
      }
    }

    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < opt.threads; ++t)
      pool.emplace_back([this, t] { worker_entry(t); });
    worker_entry(0);
    for (auto& th : pool) th.join();

    if (fatal.load()) throw EngineError("executor: " + fatal_message);

    for (std::uint32_t vi : subset) {
      TPGVertex& v = tpg.vertex(vi);
      FsmState s = v.fsm.load();
      if (s != FsmState::EXE && s != FsmState::ABT) {
        std::ostringstream os;
        os << "executor: batch ended with unsettled vertex op" << vi << " ts" << v.op.txn_ts
           << '.' << v.op.stmt_idx << ' ' << to_string(s) << " unresolved=" << v.unresolved.load()
           << " claim=" << int(v.claim.load()) << " fail_pending=" << v.fail_pending.load()
           << " remaining=" << remaining.load();
        std::uint32_t u = vertex_unit[vi];
        if (u != ~0u)
          os << " unit=" << u << " state=" << int(units[u].state.load())
             << " cursor=" << units[u].cursor.load() << '/' << units[u].members.size()
             << " pos=" << vertex_unit_pos[vi];
        throw EngineError(os.str());
      }
    }
    return merge_stats();
  }

  void worker_entry(std::size_t tid) {
    try {
      if (decision.explore == ExploreKind::NS)
        ns_worker(tid);
      else if (dfs())
        dfs_worker(tid);
      else
        bfs_worker(tid);
    } catch (const std::exception& e) {
      set_fatal(e.what());
    }
  }

  ExecStats merge_stats() {
    ExecStats total;
    for (const ExecStats& s : thread_stats) {
      total.executed += s.executed;
      total.redone += s.redone;
      total.abort_rounds += s.abort_rounds;
      total.signals += s.signals;
      total.breakdown += s.breakdown;
    }
    total.fsm_violations = violations.load();
    if (opt.log_transitions) total.transitions = std::move(transitions);
    return total;
  }
};

BatchExecutor::BatchExecutor(TPG& tpg, VersionedStateTable& table, const UdfRegistry& registry,
                             const SchedulingDecision& decision, const ExecutorOptions& options,
                             const std::vector<std::uint32_t>* subset)
    : impl_(std::make_unique<Impl>(tpg, table, registry, decision, options, subset)) {}

BatchExecutor::~BatchExecutor() = default;

ExecStats BatchExecutor::run() {
  ExecStats stats = impl_->run();
  aborted_list_ = impl_->aborted;
  truncation_log_ = impl_->trunc_log;
  return stats;
}

}  // namespace streamtx
