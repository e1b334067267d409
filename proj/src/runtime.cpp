#include "streamtx/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>
#include <thread>

namespace streamtx {

namespace {
using Clock = std::chrono::steady_clock;

std::uint64_t ns_since(Clock::time_point t0) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}
}  // namespace

// --- TxnBuilder ---------------------------------------------------------------

Operation& TxnBuilder::append(OpKind kind) {
  Operation op;
  op.txn_ts = txn_.txn_ts;
  op.stmt_idx = static_cast<std::uint32_t>(txn_.ops.size());
  op.kind = kind;
  txn_.ops.push_back(std::move(op));
  return txn_.ops.back();
}

void TxnBuilder::request_read(Key key) {
  Operation& op = append(OpKind::Read);
  op.keys = DeterministicKey{key};
}

void TxnBuilder::request_write(Key key, FunctionRef value_fn, std::vector<Value> args,
                               FunctionRef cond_fn) {
  Operation& op = append(OpKind::Write);
  op.keys = DeterministicKey{key};
  op.value_fn = value_fn;
  op.cond_fn = cond_fn;
  op.args = std::move(args);
}

void TxnBuilder::request_multikey_write(Key target, std::vector<Key> reads, FunctionRef value_fn,
                                        std::vector<Value> args, FunctionRef cond_fn) {
  if (reads.empty()) throw ConfigError("multikey write needs a non-empty read set");
  Operation& op = append(OpKind::Write);
  op.keys = MultiKey{target, std::move(reads)};
  op.value_fn = value_fn;
  op.cond_fn = cond_fn;
  op.args = std::move(args);
}

void TxnBuilder::request_window_read(std::vector<Key> reads, std::uint64_t size,
                                     FunctionRef agg_fn) {
  if (size == 0) throw ConfigError("window size must be positive");
  Operation& op = append(OpKind::Read);
  WindowRange w;
  w.reads = std::move(reads);
  w.size = size;
  w.trigger = txn_.txn_ts;
  op.keys = std::move(w);
  op.value_fn = agg_fn;
}

void TxnBuilder::request_window_write(Key target, std::vector<Key> reads, std::uint64_t size,
                                      FunctionRef agg_fn) {
  if (size == 0) throw ConfigError("window size must be positive");
  Operation& op = append(OpKind::Write);
  WindowRange w;
  w.target = target;
  w.reads = std::move(reads);
  w.size = size;
  w.trigger = txn_.txn_ts;
  op.keys = std::move(w);
  op.value_fn = agg_fn;
}

void TxnBuilder::request_nondet_read(FunctionRef selector, FunctionRef agg_fn,
                                     std::vector<Key> candidates) {
  if (!selector.valid()) throw ConfigError("non-deterministic read needs a key selector");
  Operation& op = append(OpKind::Read);
  op.keys = NonDeterministicKey{selector, std::move(candidates)};
  op.value_fn = agg_fn;
}

void TxnBuilder::request_nondet_write(FunctionRef selector, FunctionRef value_fn,
                                      std::vector<Value> args, std::vector<Key> candidates,
                                      FunctionRef cond_fn) {
  if (!selector.valid()) throw ConfigError("non-deterministic write needs a key selector");
  Operation& op = append(OpKind::Write);
  op.keys = NonDeterministicKey{selector, std::move(candidates)};
  op.value_fn = value_fn;
  op.cond_fn = cond_fn;
  op.args = std::move(args);
}

// --- Engine ---------------------------------------------------------------------

Engine::Engine(Operator op, EngineConfig cfg, const UdfRegistry* registry)
    : op_(std::move(op)), cfg_(std::move(cfg)), registry_(registry) {
  if (cfg_.threads == 0) throw ConfigError("engine: threads must be >= 1");
  if (cfg_.punctuation_interval == 0) throw ConfigError("engine: punctuation interval must be >= 1");
  if (!registry_) throw ConfigError("engine: UDF registry required");
  if (cfg_.ingest_threads == 0) cfg_.ingest_threads = cfg_.threads;
}

struct Engine::BatchState {
  std::uint64_t batch_index = 0;
  Timestamp base_ts = 0;  // global ts of local ts 0
  std::vector<const Event*> events;  // arrival order
  std::vector<EventBlotter> blotters;
  std::vector<Clock::time_point> ingress;
  std::vector<std::int64_t> txn_of_event;  // local ts or -1 (filtered/no-op)
  std::vector<std::uint64_t> event_of_txn;  // local ts -> event position + 1 (0 = none)
  std::unique_ptr<Planner> planner;
  std::unique_ptr<VersionedStateTable>* table;
};

void Engine::ingest_batch(BatchState& bs) {
  const std::size_t n = bs.events.size();
  bs.blotters.resize(n);
  bs.txn_of_event.assign(n, -1);
  bs.event_of_txn.assign(n + 1, 0);

  auto ingest_one = [&](std::size_t i) {
    const Event& e = *bs.events[i];
    EventBlotter eb = op_.pre_process(e);
    eb.event_id = e.event_id;
    if (eb.status == BlotterStatus::Filtered) {
      bs.blotters[i] = std::move(eb);
      return;
    }
    Timestamp local_ts = e.ts - bs.base_ts;
    TxnBuilder builder(local_ts, e.event_id, e.group);
    op_.state_access(builder, eb);
    if (builder.op_count() == 0) throw EngineError("state_access issued no operations");
    eb.results.assign(builder.op_count(), 0);
    StateTransaction txn = builder.take();
    bs.planner->phase1_insert(txn);
    bs.txn_of_event[i] = static_cast<std::int64_t>(local_ts);
    bs.event_of_txn[local_ts] = i + 1;
    bs.blotters[i] = std::move(eb);
  };

  if (cfg_.ingest_threads <= 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) ingest_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex err_mu;
    auto worker = [&] {
      try {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          ingest_one(i);
        }
      } catch (const std::exception& ex) {
        std::scoped_lock lk(err_mu);
        error = ex.what();
        failed.store(true);
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < cfg_.ingest_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (failed.load()) throw EngineError("ingest: " + error);
  }
}

void Engine::execute_batch(BatchState& bs, RunResult& result) {
  BatchReport report;
  report.batch = bs.batch_index;
  report.events = bs.events.size();
  Clock::time_point batch_t0 = Clock::now();

  TPG& tpg = bs.planner->tpg();
  VersionedStateTable& table = **bs.table;

  // Groups present in this batch.
  std::set<GroupTag> groups;
  for (std::uint32_t i = 0; i < tpg.vertex_count(); ++i) groups.insert(tpg.vertex(i).group);
  bool nested = (cfg_.nested || !cfg_.forced_nested.empty()) && groups.size() > 1;

  if (nested) {
    // Nested execution requires key-disjoint groups: no TD/PD edge may
    // cross a group boundary.
    for (std::uint32_t i = 0; i < tpg.vertex_count() && nested; ++i)
      for (const DepEdge& e : tpg.vertex(i).out)
        if (e.cls != DependencyClass::LD && tpg.vertex(e.vertex).group != tpg.vertex(i).group) {
          nested = false;
          break;
        }
  }

  // Scheduling decisions per group (or one for the whole batch).
  std::map<GroupTag, double> estimates;
  if (nested) {
    for (GroupTag g : groups) {
      auto hint = cfg_.group_abort_hints.find(g);
      auto ewma = abort_ewma_.find(g);
      estimates[g] = ewma != abort_ewma_.end() ? ewma->second
              : hint != cfg_.group_abort_hints.end() ? hint->second
                                                     : cfg_.abort_estimate_hint;
    }
    report.props = measure_properties_grouped(tpg, *registry_, estimates);
    report.decisions = decide_nested(report.props, cfg_.thresholds, cfg_.explore_variant);
    for (auto& [g, d] : report.decisions) {
      auto forced = cfg_.forced_nested.find(g);
      if (forced != cfg_.forced_nested.end()) d = forced->second;
      else if (cfg_.forced) d = *cfg_.forced;
    }
  } else {
    double estimate = have_observation_ ? abort_ewma_single_ : cfg_.abort_estimate_hint;
    report.props[0] = measure_properties(tpg, *registry_, estimate);
    report.decisions[0] =
        cfg_.forced ? *cfg_.forced : decide(report.props[0], cfg_.thresholds, cfg_.explore_variant);
  }

  for (const auto& [g, d] : report.decisions) {
    std::ostringstream os;
    const TPGProperties& p = report.props.at(g);
    os << "batch=" << report.batch << " group=" << g << " explore="
       << (d.explore == ExploreKind::S
               ? (d.explore_variant == ExploreVariant::BFS ? "S/BFS" : "S/DFS")
               : "NS/-")
       << " gran=" << (d.granularity == Granularity::FINE ? 'F' : 'C')
       << " abort=" << (d.abort == AbortKind::EAGER ? 'E' : 'L') << " props=(" << p.str() << ")";
    result.decision_trace.push_back(os.str());
  }

  // Execution.
  ExecutorOptions opt;
  opt.speculation = cfg_.speculation;
  opt.collect_breakdown = cfg_.collect_breakdown;
  opt.log_transitions = cfg_.log_transitions;
  opt.faults = cfg_.faults;

  std::vector<Timestamp> aborted;
  table.begin_batch();
  if (!nested) {
    opt.threads = cfg_.threads;
    BatchExecutor exec(tpg, table, *registry_, report.decisions.at(0), opt);
    report.stats = exec.run();
    aborted = exec.aborted_txns();
  } else {
    // Split the pool proportionally to per-group vertex counts and run the
    // groups concurrently, each under its own decision.
    std::map<GroupTag, std::vector<std::uint32_t>> members;
    for (std::uint32_t i = 0; i < tpg.vertex_count(); ++i)
      members[tpg.vertex(i).group].push_back(i);
    std::size_t total = tpg.vertex_count();
    std::vector<std::thread> runners;
    std::mutex merge_mu;
    std::string error;
    for (auto& [g, subset] : members) {
      std::size_t share = std::max<std::size_t>(
          1, cfg_.threads * subset.size() / std::max<std::size_t>(total, 1));
      runners.emplace_back([&, g = g, share]() {
        try {
          ExecutorOptions gopt = opt;
          gopt.threads = share;
          BatchExecutor exec(tpg, table, *registry_, report.decisions.at(g), gopt,
                             &members.at(g));
          ExecStats stats = exec.run();
          std::scoped_lock lk(merge_mu);
          report.stats.executed += stats.executed;
          report.stats.redone += stats.redone;
          report.stats.abort_rounds += stats.abort_rounds;
          report.stats.signals += stats.signals;
          report.stats.fsm_violations += stats.fsm_violations;
          report.stats.breakdown += stats.breakdown;
          for (auto& t : stats.transitions) report.stats.transitions.push_back(t);
          for (Timestamp ts : exec.aborted_txns()) aborted.push_back(ts);
        } catch (const std::exception& ex) {
          std::scoped_lock lk(merge_mu);
          if (error.empty()) error = ex.what();
        }
      });
    }
    for (auto& th : runners) th.join();
    if (!error.empty()) throw EngineError(error);
  }
  table.end_batch();

  // Post-processing: transfer state access results into the blotters and
  // emit outputs, failed markers included.
  std::set<Timestamp> aborted_set(aborted.begin(), aborted.end());
  report.aborted_txns = aborted_set.size();
  for (std::uint32_t i = 0; i < tpg.vertex_count(); ++i) {
    const TPGVertex& v = tpg.vertex(i);
    std::uint64_t pos = bs.event_of_txn[v.op.txn_ts];
    if (pos == 0) continue;
    EventBlotter& eb = bs.blotters[pos - 1];
    if (v.op.stmt_idx < eb.results.size() && v.rec.has_output)
      eb.results[v.op.stmt_idx] = v.rec.output;
  }

  std::size_t txns = 0, committed = 0;
  for (std::size_t i = 0; i < bs.events.size(); ++i) {
    EventBlotter& eb = bs.blotters[i];
    if (bs.txn_of_event[i] < 0) {
      if (eb.status == BlotterStatus::Pending) eb.status = BlotterStatus::Filtered;
    } else {
      ++txns;
      Timestamp ts = static_cast<Timestamp>(bs.txn_of_event[i]);
      eb.status = aborted_set.count(ts) ? BlotterStatus::Failed : BlotterStatus::Committed;
      if (eb.status == BlotterStatus::Committed) {
        ++committed;
        result.committed_events.push_back(eb.event_id);
      }
    }
    auto out = op_.post_process(*bs.events[i], eb);
    if (out) {
      out->event_id = eb.event_id;
      out->failed = eb.status == BlotterStatus::Failed;
      result.outputs.push_back(std::move(*out));
    }
    report.latencies_ns.push_back(ns_since(bs.ingress[i]));
  }

  // Abort-ratio estimation for the next batch (EWMA of observations).
  if (txns > 0) {
    double observed = static_cast<double>(txns - committed) / static_cast<double>(txns);
    abort_ewma_single_ =
        have_observation_ ? 0.5 * abort_ewma_single_ + 0.5 * observed : observed;
    have_observation_ = true;
    if (nested) {
      std::map<GroupTag, std::pair<std::size_t, std::size_t>> per_group;  // txns, aborted
      for (std::size_t i = 0; i < bs.events.size(); ++i) {
        if (bs.txn_of_event[i] < 0) continue;
        auto& [t, a] = per_group[bs.events[i]->group];
        ++t;
        if (bs.blotters[i].status == BlotterStatus::Failed) ++a;
      }
      for (auto& [g, ta] : per_group) {
        double obs = ta.first ? static_cast<double>(ta.second) / ta.first : 0.0;
        auto it = abort_ewma_.find(g);
        abort_ewma_[g] = it == abort_ewma_.end() ? obs : 0.5 * it->second + 0.5 * obs;
      }
    }
  }

  result.fsm_violations += report.stats.fsm_violations;
  report.wall_ns = ns_since(batch_t0);
  result.batches.push_back(std::move(report));

  table.gc_batch();
}

RunResult Engine::run(const std::vector<Event>& stream) {
  RunResult result;
  auto table = std::make_unique<VersionedStateTable>(cfg_.key_space, cfg_.initial_value);

  std::size_t pos = 0;
  std::uint64_t batch_index = 0;
  while (pos < stream.size()) {
    std::size_t count = std::min<std::size_t>(cfg_.punctuation_interval, stream.size() - pos);
    BatchState bs;
    bs.batch_index = batch_index++;
    bs.table = &table;
    bs.events.reserve(count);
    Timestamp min_ts = ~0ull;
    for (std::size_t i = 0; i < count; ++i) {
      bs.events.push_back(&stream[pos + i]);
      min_ts = std::min(min_ts, stream[pos + i].ts);
    }
    bs.base_ts = min_ts - 1;
    bs.ingress.assign(count, Clock::now());

    Clock::time_point c0 = Clock::now();
    bs.planner = std::make_unique<Planner>(cfg_.key_space, static_cast<std::uint32_t>(count));
    ingest_batch(bs);
    bs.planner->phase2_refine(cfg_.threads);
    bs.planner->stratify();
    std::uint64_t construct = ns_since(c0);

    execute_batch(bs, result);
    result.batches.back().construct_ns = construct;
    result.batches.back().stats.breakdown.construct += construct;

    pos += count;
  }

  result.final_state = table->final_values();
  result.final_table_dump = table->dump();
  std::sort(result.committed_events.begin(), result.committed_events.end());
  std::sort(result.outputs.begin(), result.outputs.end(),
            [](const OutputRecord& a, const OutputRecord& b) { return a.event_id < b.event_id; });
  return result;
}

}  // namespace streamtx
