#include <map>
#include <random>

#include "doctest.h"
#include "streamtx/executor.hpp"
#include "streamtx/planner.hpp"

using namespace streamtx;

namespace {

struct Fixture {
  std::uint64_t key_space;
  Value initial;
  std::shared_ptr<UdfRegistry> reg = std::make_shared<UdfRegistry>();
  FunctionRef add, recv, sub_guarded_value, guard, never, sum_window, pick_first;
  std::vector<StateTransaction> txns;

  explicit Fixture(std::uint64_t keys, Value init = 100) : key_space(keys), initial(init) {
    add = reg->register_value([](const UdfContext& c) { return c.reads[0] + c.args[0]; }, 1);
    recv = reg->register_value([](const UdfContext& c) { return c.reads[1] + c.args[0]; }, 2);
    sub_guarded_value =
        reg->register_value([](const UdfContext& c) { return c.reads[0] - c.args[0]; }, 1);
    guard = reg->register_condition([](const UdfContext& c) { return c.reads[0] >= c.args[0]; }, 1);
    never = reg->register_condition([](const UdfContext&) { return false; }, 0);
    sum_window = reg->register_window([](std::span<const Value> vals) {
      Value s = 0;
      for (Value v : vals) s += v;
      return s;
    });
    pick_first = reg->register_selector(
        [](const UdfContext& c) { return std::vector<Key>{static_cast<Key>(c.args[0])}; });
    reg->seal();
  }

  StateTransaction& txn(Timestamp ts) {
    for (auto& t : txns)
      if (t.txn_ts == ts) return t;
    txns.push_back({});
    txns.back().txn_ts = ts;
    txns.back().event_id = ts;
    return txns.back();
  }

  Operation& op(Timestamp ts, OpKind kind) {
    StateTransaction& t = txn(ts);
    Operation o;
    o.txn_ts = ts;
    o.stmt_idx = static_cast<std::uint32_t>(t.ops.size());
    o.kind = kind;
    t.ops.push_back(std::move(o));
    return t.ops.back();
  }

  Operation& add_write(Timestamp ts, Key key, Value delta, bool fail = false) {
    Operation& o = op(ts, OpKind::Write);
    o.keys = DeterministicKey{key};
    o.value_fn = add;
    o.args = {delta};
    if (fail) o.cond_fn = never;
    return o;
  }

  struct RunOutput {
    ExecStats stats;
    std::vector<Value> state;
    std::vector<Timestamp> aborted;
    std::vector<std::pair<Timestamp, std::vector<Key>>> truncations;
  };

  RunOutput run(SchedulingDecision d, std::size_t threads, ExecutorOptions extra = {}) {
    std::sort(txns.begin(), txns.end(),
              [](const StateTransaction& a, const StateTransaction& b) {
                return a.txn_ts < b.txn_ts;
              });
    Planner planner(key_space, static_cast<std::uint32_t>(txns.back().txn_ts));
    for (const auto& t : txns) planner.phase1_insert(t);
    planner.phase2_refine();
    planner.stratify();
    VersionedStateTable table(key_space, initial);
    ExecutorOptions opt = extra;
    opt.threads = threads;
    BatchExecutor exec(planner.tpg(), table, *reg, d, opt);
    RunOutput out;
    out.stats = exec.run();
    out.state = table.final_values();
    out.aborted = exec.aborted_txns();
    out.truncations = exec.truncation_log();
    return out;
  }

  // In-order reference evaluation with all-or-nothing transactions.
  std::vector<Value> expected_state() const {
    std::vector<Value> state(key_space, initial);
    std::vector<const StateTransaction*> order;
    for (const auto& t : txns) order.push_back(&t);
    std::sort(order.begin(), order.end(),
              [](const StateTransaction* a, const StateTransaction* b) {
                return a->txn_ts < b->txn_ts;
              });
    for (const StateTransaction* t : order) {
      std::vector<std::pair<Key, Value>> buffer;
      auto read = [&](Key k) {
        for (auto it = buffer.rbegin(); it != buffer.rend(); ++it)
          if (it->first == k) return it->second;
        return state[k];
      };
      bool aborted = false;
      for (const Operation& o : t->ops) {
        std::vector<Value> reads;
        Key target = 0;
        bool has_target = false;
        if (const auto* d = std::get_if<DeterministicKey>(&o.keys)) {
          reads.push_back(read(d->key));
          if (o.kind == OpKind::Write) {
            target = d->key;
            has_target = true;
          }
        } else if (const auto* m = std::get_if<MultiKey>(&o.keys)) {
          for (Key k : m->reads) reads.push_back(read(k));
          target = m->target;
          has_target = true;
        }
        if (o.cond_fn.valid()) {
          UdfContext ctx{reads, o.args};
          if (!reg->condition_fn(o.cond_fn)(ctx)) {
            aborted = true;
            break;
          }
        }
        if (o.kind == OpKind::Write && has_target && o.value_fn.valid()) {
          UdfContext ctx{reads, o.args};
          buffer.emplace_back(target, reg->value_fn(o.value_fn)(ctx));
        }
      }
      if (!aborted)
        for (const auto& [k, v] : buffer) state[k] = v;
    }
    return state;
  }
};

SchedulingDecision make_decision(ExploreKind e, Granularity g, AbortKind a,
                                 ExploreVariant v = ExploreVariant::DFS) {
  SchedulingDecision d;
  d.explore = e;
  d.granularity = g;
  d.abort = a;
  d.explore_variant = v;
  return d;
}

const std::vector<SchedulingDecision> kAllDecisions = {
    make_decision(ExploreKind::S, Granularity::FINE, AbortKind::EAGER, ExploreVariant::BFS),
    make_decision(ExploreKind::S, Granularity::FINE, AbortKind::EAGER, ExploreVariant::DFS),
    make_decision(ExploreKind::S, Granularity::COARSE, AbortKind::EAGER, ExploreVariant::BFS),
    make_decision(ExploreKind::S, Granularity::FINE, AbortKind::LAZY, ExploreVariant::DFS),
    make_decision(ExploreKind::S, Granularity::COARSE, AbortKind::LAZY, ExploreVariant::BFS),
    make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER),
    make_decision(ExploreKind::NS, Granularity::COARSE, AbortKind::EAGER),
    make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::LAZY),
    make_decision(ExploreKind::NS, Granularity::COARSE, AbortKind::LAZY),
};

}  // namespace

TEST_CASE("roots become ready and a serial chain executes in order") {
  Fixture f(2);
  f.add_write(1, 0, 1);
  f.add_write(2, 0, 2);
  f.add_write(3, 0, 3);
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 2);
  CHECK(out.state[0] == 106);
  CHECK(out.stats.fsm_violations == 0);
  CHECK(out.aborted.empty());
}

TEST_CASE("guarded transfers observe the sender's buffered value") {
  Fixture f(2);
  // Transfer of 40 from key 0 (balance 100): the receiver statement reads
  // the sender's post-write value through the transaction-local buffer, so
  // its guard sees 60 and passes.
  Operation& sender = f.op(1, OpKind::Write);
  sender.keys = DeterministicKey{0};
  sender.value_fn = f.sub_guarded_value;
  sender.cond_fn = f.guard;
  sender.args = {40};
  Operation& receiver = f.op(1, OpKind::Write);
  receiver.keys = MultiKey{1, {0, 1}};
  receiver.value_fn = f.recv;
  receiver.cond_fn = f.guard;
  receiver.args = {40};

  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out.state[0] == 60);
  CHECK(out.state[1] == 140);
  CHECK(out.state == f.expected_state());
  CHECK(out.aborted.empty());

  // A transfer of 60 fails the receiver guard against the buffered 40.
  Fixture g(2);
  Operation& s2 = g.op(1, OpKind::Write);
  s2.keys = DeterministicKey{0};
  s2.value_fn = g.sub_guarded_value;
  s2.cond_fn = g.guard;
  s2.args = {60};
  Operation& r2 = g.op(1, OpKind::Write);
  r2.keys = MultiKey{1, {0, 1}};
  r2.value_fn = g.recv;
  r2.cond_fn = g.guard;
  r2.args = {60};
  auto out2 = g.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out2.state[0] == 100);
  CHECK(out2.state[1] == 100);
  CHECK(out2.aborted.size() == 1);
  CHECK(out2.state == g.expected_state());
}

TEST_CASE("a failing guard aborts the whole transaction atomically") {
  Fixture f(2);
  Operation& sender = f.op(1, OpKind::Write);
  sender.keys = DeterministicKey{0};
  sender.value_fn = f.sub_guarded_value;
  sender.cond_fn = f.guard;
  sender.args = {150};  // exceeds the balance of 100
  f.add_write(1, 1, 150);

  for (const auto& d : kAllDecisions) {
    Fixture g(2);
    g.txns = f.txns;
    auto out = g.run(d, 2);
    CHECK(out.state[0] == 100);
    CHECK(out.state[1] == 100);
    REQUIRE(out.aborted.size() == 1);
    CHECK(out.aborted[0] == 1);
    CHECK(out.stats.fsm_violations == 0);
  }
}

TEST_CASE("abort of a read-only transaction truncates nothing") {
  Fixture f(2);
  Operation& r = f.op(1, OpKind::Read);
  r.keys = DeterministicKey{0};
  r.cond_fn = f.never;
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  REQUIRE(out.truncations.size() == 1);
  CHECK(out.truncations[0].second.empty());
  CHECK(out.state[0] == 100);
}

TEST_CASE("rollback scenario: abort cascades over a parametric dependency with one redo") {
  // O1 and O2 form one transaction (O1 carries a failing guard); O3 in a
  // second transaction reads O2's key. Lazy handling lets O2 and O3
  // execute, then aborts the first transaction, truncates O2's version and
  // rolls O3 back for exactly one redo.
  Fixture f(3);
  Operation& o1 = f.op(1, OpKind::Write);
  o1.keys = DeterministicKey{0};
  o1.value_fn = f.add;
  o1.args = {5};
  o1.cond_fn = f.never;  // O1 aborts
  f.add_write(1, 1, 10);  // O2 writes key 1

  Operation& o3 = f.op(2, OpKind::Write);
  o3.keys = MultiKey{2, {1}};
  o3.value_fn = f.add;
  o3.args = {7};  // key2 = read(key1) + 7

  ExecutorOptions opt;
  opt.log_transitions = true;
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::LAZY), 1, opt);

  CHECK(out.state[0] == 100);
  CHECK(out.state[1] == 100);
  CHECK(out.state[2] == 207);  // reads the pre-batch value of key 1
  REQUIRE(out.aborted.size() == 1);

  // Transition audit: O3 (vertex 2) executes, rolls back (T5), re-executes.
  int o3_exec = 0, o3_rollback = 0;
  for (const TransitionRecord& t : out.stats.transitions) {
    if (t.vertex != 2) continue;
    if (t.to == FsmState::EXE) ++o3_exec;
    if (t.from == FsmState::EXE && t.to == FsmState::RDY) {
      ++o3_rollback;
      CHECK(std::string(t.label) == "T5");
    }
  }
  CHECK(o3_exec == 2);
  CHECK(o3_rollback == 1);
  CHECK(out.stats.redone == 1);
  CHECK(out.stats.fsm_violations == 0);
  // O1 and O2 end aborted.
  for (const TransitionRecord& t : out.stats.transitions)
    if (t.to == FsmState::ABT) CHECK(std::string(t.label) == "T4");
}

TEST_CASE("eager structured exploration restarts from the aborted stratum") {
  Fixture f(2, 1000);
  f.add_write(1, 0, 1);
  f.add_write(2, 0, 2, /*fail=*/true);  // aborts in a middle stratum
  f.add_write(3, 0, 4);
  f.add_write(4, 0, 8);
  auto out =
      f.run(make_decision(ExploreKind::S, Granularity::FINE, AbortKind::EAGER, ExploreVariant::BFS),
            2);
  CHECK(out.state[0] == 1013);
  CHECK(out.stats.abort_rounds >= 1);
  CHECK(out.state == f.expected_state());
}

TEST_CASE("failure with no dependents aborts only its own transaction") {
  Fixture f(4);
  f.add_write(1, 0, 1);
  f.add_write(2, 1, 2, /*fail=*/true);
  f.add_write(3, 2, 3);
  for (const auto& d : kAllDecisions) {
    Fixture g(4);
    g.txns = f.txns;
    auto out = g.run(d, 2);
    CHECK(out.aborted == std::vector<Timestamp>{2});
    CHECK(out.state == g.expected_state());
  }
}

TEST_CASE("a lazy redo whose guard outcome flips is handled by the next pass") {
  // txn1 drops key0 to 10 and then aborts on its second statement. txn2's
  // guard (key0 >= 60) fails against txn1's 10 in the first exploration
  // pass, but passes once the rollback restores 100 — the logged failure
  // is voided and the redo commits.
  Fixture g(3);
  Operation& w1 = g.op(1, OpKind::Write);
  w1.keys = DeterministicKey{0};
  w1.value_fn = g.add;
  w1.args = {-90};
  g.add_write(1, 1, 5, /*fail=*/true);  // txn1 always aborts in the end

  Operation& w2 = g.op(2, OpKind::Write);
  w2.keys = MultiKey{2, {0, 2}};
  w2.value_fn = g.recv;  // key2 := read(key2) + 60
  w2.cond_fn = g.guard;  // needs read(key0) >= 60
  w2.args = {60};

  auto out = g.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::LAZY), 1);
  CHECK(out.aborted == std::vector<Timestamp>{1});
  CHECK(out.state[0] == 100);
  CHECK(out.state[2] == 160);
  CHECK(out.state == g.expected_state());

  // The reverse shape: txn2 passes against txn1's value, then must fail
  // after the rollback. The second lazy pass aborts it.
  Fixture h(3, 50);
  Operation& u1 = h.op(1, OpKind::Write);
  u1.keys = DeterministicKey{0};
  u1.value_fn = h.add;
  u1.args = {50};  // key0: 50 -> 100
  h.add_write(1, 1, 5, /*fail=*/true);

  Operation& u2 = h.op(2, OpKind::Write);
  u2.keys = MultiKey{2, {0, 2}};
  u2.value_fn = h.recv;
  u2.cond_fn = h.guard;  // needs read(key0) >= 60: 100 passes, 50 fails
  u2.args = {60};

  auto out2 = h.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::LAZY), 1);
  CHECK(out2.aborted.size() == 2);
  CHECK(out2.state[0] == 50);
  CHECK(out2.state[2] == 50);
  CHECK(out2.state == h.expected_state());
}

TEST_CASE("window aggregation over committed versions") {
  Fixture f(3);
  f.add_write(1, 0, 10);   // key0: 110
  f.add_write(2, 0, -30);  // key0: 80
  f.add_write(3, 1, 42);   // key1: 142

  Operation& win = f.op(4, OpKind::Write);
  WindowRange w;
  w.target = 2;
  w.reads = {0};
  w.size = 10;
  w.trigger = 4;
  win.keys = std::move(w);
  win.value_fn = f.sum_window;

  for (const auto& d : kAllDecisions) {
    Fixture g(3);
    g.txns = f.txns;
    auto out = g.run(d, 2);
    // Window [0, 4) over key0: snapshot 100, 110, 80 -> sum 290.
    CHECK(out.state[2] == 290);
    CHECK(out.stats.fsm_violations == 0);
  }
}

TEST_CASE("empty windows aggregate to the identity") {
  Fixture f(2);
  Operation& win = f.op(1, OpKind::Write);
  WindowRange w;
  w.target = 1;
  w.reads = {0};
  w.size = 1;
  w.trigger = 1;
  win.keys = std::move(w);
  win.value_fn = f.sum_window;
  // [0, 1) includes the snapshot at ts 0.
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out.state[1] == 100);

  Fixture g(2);
  Operation& win2 = g.op(2, OpKind::Write);
  WindowRange w2;
  w2.target = 1;
  w2.reads = {0};
  w2.size = 1;
  w2.trigger = 2;  // [1, 2): no versions
  win2.keys = std::move(w2);
  win2.value_fn = g.sum_window;
  g.add_write(1, 0, 5);
  auto out2 = g.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out2.state[1] == 105);  // only the ts-1 write is in range
}

TEST_CASE("non-deterministic writes resolve their key at execution") {
  Fixture f(4);
  Operation& nd = f.op(1, OpKind::Write);
  nd.keys = NonDeterministicKey{f.pick_first, {2}};
  nd.value_fn = f.add;
  // args[0] doubles as the selected key and the delta: key 2 gains 2.
  nd.args = {2};
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out.state[2] == 102);
  CHECK(out.state[0] == 100);
  CHECK(out.state[1] == 100);

  // A degenerate selector equals a deterministic write.
  Fixture g(4);
  g.add_write(1, 2, 2);
  auto out2 = g.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 1);
  CHECK(out.state == out2.state);
}

TEST_CASE("aborted non-deterministic writes truncate exactly the resolved keys") {
  Fixture f(4);
  Operation& nd = f.op(1, OpKind::Write);
  nd.keys = NonDeterministicKey{f.pick_first, {1, 2, 3}};
  nd.args = {3};  // resolves to key 3
  nd.value_fn = f.add;
  f.add_write(1, 1, 1, /*fail=*/true);  // sibling failure aborts the txn

  for (const auto& d : kAllDecisions) {
    Fixture g(4);
    g.txns = f.txns;
    auto out = g.run(d, 2);
    CHECK(out.state == std::vector<Value>(4, 100));
    REQUIRE(out.truncations.size() == 1);
    // The nondet write landed on key 3 before the abort; only that key
    // (and the failing statement's own target, which wrote nothing) is
    // truncated.
    REQUIRE(out.truncations[0].second.size() == 1);
    CHECK(out.truncations[0].second[0] == 3);
  }
}

TEST_CASE("randomized batches settle with legal transitions under every strategy") {
  std::mt19937_64 rng(17);
  for (int round = 0; round < 6; ++round) {
    Fixture proto(6, 1000);
    Timestamp ts = 1;
    for (; ts <= 40; ++ts) {
      bool fail = rng() % 10 == 0;
      proto.add_write(ts, rng() % 6, static_cast<Value>(rng() % 20), fail);
      if (rng() % 2) {
        Operation& second = proto.op(ts, OpKind::Write);
        Key target = rng() % 6;
        Key readk = rng() % 6;
        second.keys = MultiKey{target, {readk, target}};
        second.value_fn = proto.add;
        second.args = {static_cast<Value>(rng() % 20)};
      }
    }
    auto expected = proto.expected_state();
    for (const auto& d : kAllDecisions) {
      for (std::size_t threads : {1u, 4u}) {
        Fixture g(6, 1000);
        g.txns = proto.txns;
        ExecutorOptions opt;
        opt.log_transitions = true;
        auto out = g.run(d, threads, opt);
        REQUIRE(out.stats.fsm_violations == 0);
        CHECK(out.state == expected);
        // Only the six legal transition labels appear.
        for (const TransitionRecord& t : out.stats.transitions) {
          std::string label = t.label;
          bool legal = label == "T1" || label == "T2" || label == "T3" || label == "T4" ||
                       label == "T5" || label == "T6";
          CHECK(legal);
        }
      }
    }
  }
}

TEST_CASE("speculation executes blocked reads whose governors committed") {
  // A chain W(k0) -> R-chain: with speculation on, the dependent write can
  // run from BLK (T3) once its governing version exists even though the
  // intermediate signal has not arrived. Observable through the T3 label.
  Fixture f(2, 50);
  f.add_write(1, 0, 1);
  f.add_write(2, 0, 2);
  f.add_write(3, 0, 3);
  ExecutorOptions opt;
  opt.log_transitions = true;
  opt.speculation = SpeculationMode::On;
  auto out = f.run(make_decision(ExploreKind::NS, Granularity::FINE, AbortKind::EAGER), 4, opt);
  CHECK(out.state[0] == 56);
  CHECK(out.stats.fsm_violations == 0);
}
