#include <set>

#include "doctest.h"
#include "streamtx/oracle.hpp"
#include "streamtx/runtime.hpp"
#include "streamtx/workloads.hpp"

using namespace streamtx;
using namespace streamtx::workloads;

namespace {

EngineConfig base_config(const Workload& w, std::size_t threads = 2) {
  EngineConfig cfg;
  cfg.key_space = w.key_space;
  cfg.initial_value = w.initial_value;
  cfg.threads = threads;
  cfg.punctuation_interval = w.knobs.punctuation_interval;
  return cfg;
}

}  // namespace

TEST_CASE("request builders produce the documented key specifications") {
  TxnBuilder b(3, 42, 0);
  FunctionRef fn;
  fn.id = 0;
  FunctionRef sel = fn;
  sel.kind = FunctionKind::KeySelector;
  FunctionRef agg = fn;
  agg.kind = FunctionKind::WindowAggregate;

  b.request_read(7);
  b.request_write(8, fn, {1});
  b.request_multikey_write(9, {7, 9}, fn, {2});
  b.request_window_read({1, 2}, 10, agg);
  b.request_window_write(5, {1}, 20, agg);
  b.request_nondet_read(sel);
  b.request_nondet_write(sel, fn, {3}, {1, 2});

  StateTransaction txn = b.take();
  REQUIRE(txn.ops.size() == 7);
  CHECK(txn.txn_ts == 3);
  CHECK(txn.event_id == 42);
  for (std::uint32_t i = 0; i < txn.ops.size(); ++i) CHECK(txn.ops[i].stmt_idx == i);

  CHECK(std::get<DeterministicKey>(txn.ops[0].keys).key == 7);
  CHECK(txn.ops[0].kind == OpKind::Read);
  CHECK(std::get<DeterministicKey>(txn.ops[1].keys).key == 8);
  CHECK(std::get<MultiKey>(txn.ops[2].keys).target == 9);
  CHECK(std::get<WindowRange>(txn.ops[3].keys).size == 10);
  CHECK(std::get<WindowRange>(txn.ops[3].keys).trigger == 3);
  CHECK(std::get<WindowRange>(txn.ops[4].keys).target == 5);
  CHECK(txn.ops[5].kind == OpKind::Read);
  CHECK(std::holds_alternative<NonDeterministicKey>(txn.ops[5].keys));
  CHECK(std::get<NonDeterministicKey>(txn.ops[6].keys).candidates.size() == 2);

  TxnBuilder bad(1, 0, 0);
  CHECK_THROWS_AS(bad.request_window_read({1}, 0, agg), ConfigError);
  CHECK_THROWS_AS(bad.request_nondet_write(FunctionRef{}, fn), ConfigError);
  CHECK_THROWS_AS(bad.request_multikey_write(1, {}, fn), ConfigError);
}

TEST_CASE("a small ledger batch matches the reference executor end to end") {
  WorkloadKnobs knobs;
  knobs.events = 3;
  knobs.punctuation_interval = 8;
  knobs.udf_cost_us = 0;
  knobs.transfer_ratio = 1.0;
  knobs.key_space = 4;
  Workload w = gen_sl(knobs);

  Engine engine(w.op, base_config(w, 1), w.registry.get());
  RunResult run = engine.run(w.events);
  OracleResult oracle = serial_oracle(w, knobs.punctuation_interval);
  CHECK(run.final_state == oracle.final_state);
  CHECK(run.committed_events == oracle.committed_events);
  REQUIRE(run.outputs.size() == oracle.outputs.size());
  for (std::size_t i = 0; i < run.outputs.size(); ++i) CHECK(run.outputs[i] == oracle.outputs[i]);
}

TEST_CASE("an empty stream is a no-op run") {
  WorkloadKnobs knobs;
  knobs.events = 1;
  knobs.udf_cost_us = 0;
  Workload w = gen_sl(knobs);
  w.events.clear();
  Engine engine(w.op, base_config(w), w.registry.get());
  RunResult run = engine.run(w.events);
  CHECK(run.outputs.empty());
  CHECK(run.batches.empty());
  CHECK(run.final_state == std::vector<Value>(w.key_space, w.knobs.initial_value));
}

TEST_CASE("multiple punctuation intervals form separate planning cycles") {
  WorkloadKnobs knobs;
  knobs.events = 512;
  knobs.punctuation_interval = 128;
  knobs.udf_cost_us = 0;
  knobs.abort_ratio = 0.1;
  Workload w = gen_sl(knobs);
  Engine engine(w.op, base_config(w), w.registry.get());
  RunResult run = engine.run(w.events);
  CHECK(run.batches.size() == 4);
  for (const auto& b : run.batches) CHECK(b.events == 128);
  OracleResult oracle = serial_oracle(w, knobs.punctuation_interval);
  CHECK(run.final_state == oracle.final_state);
  CHECK(run.committed_events == oracle.committed_events);
}

TEST_CASE("every event is post-processed exactly once with correct markers") {
  WorkloadKnobs knobs;
  knobs.events = 600;
  knobs.punctuation_interval = 200;
  knobs.abort_ratio = 0.25;
  knobs.udf_cost_us = 0;
  Workload w = gen_sl(knobs);
  Engine engine(w.op, base_config(w), w.registry.get());
  RunResult run = engine.run(w.events);

  CHECK(run.outputs.size() == w.events.size());
  std::set<std::uint64_t> seen;
  for (const OutputRecord& o : run.outputs) CHECK(seen.insert(o.event_id).second);

  std::set<std::uint64_t> committed(run.committed_events.begin(), run.committed_events.end());
  std::size_t failed = 0;
  for (const OutputRecord& o : run.outputs) {
    CHECK(o.failed == !committed.count(o.event_id));
    failed += o.failed;
  }
  CHECK(failed > 0);  // the abort knob produced failures
  CHECK(failed + committed.size() == w.events.size());
}

TEST_CASE("shuffled arrival is oracle-identical: timestamps form the batch range") {
  WorkloadKnobs knobs;
  knobs.events = 1024;
  knobs.punctuation_interval = 256;
  knobs.abort_ratio = 0.2;
  knobs.theta = 0.5;
  knobs.udf_cost_us = 0;
  Workload w = gen_sl(knobs);
  OracleResult oracle = serial_oracle(w, knobs.punctuation_interval);

  std::mt19937_64 rng(77);
  shuffle_arrival(w.events, 256, 256, rng);
  Engine engine(w.op, base_config(w, 4), w.registry.get());
  RunResult run = engine.run(w.events);
  CHECK(run.final_state == oracle.final_state);
  CHECK(run.committed_events == oracle.committed_events);
  REQUIRE(run.outputs.size() == oracle.outputs.size());
  for (std::size_t i = 0; i < run.outputs.size(); ++i) CHECK(run.outputs[i] == oracle.outputs[i]);
}

TEST_CASE("decision traces carry one line per batch and group") {
  WorkloadKnobs knobs;
  knobs.events = 256;
  knobs.punctuation_interval = 128;
  knobs.udf_cost_us = 0;
  Workload w = gen_tp(knobs);
  EngineConfig cfg = base_config(w);
  cfg.nested = true;
  cfg.group_abort_hints[1] = 0.4;
  cfg.group_abort_hints[2] = 0.0;
  Engine engine(w.op, cfg, w.registry.get());
  RunResult run = engine.run(w.events);
  // Two batches, two groups each.
  CHECK(run.decision_trace.size() == 4);
  for (const std::string& line : run.decision_trace) {
    CHECK(line.find("batch=") == 0);
    CHECK(line.find("group=") != std::string::npos);
    CHECK(line.find("explore=") != std::string::npos);
    CHECK(line.find("props=(") != std::string::npos);
  }
  OracleResult oracle = serial_oracle(w, knobs.punctuation_interval);
  CHECK(run.final_state == oracle.final_state);
}

TEST_CASE("nested execution honors per-group forced strategies") {
  WorkloadKnobs knobs;
  knobs.events = 512;
  knobs.punctuation_interval = 256;
  knobs.udf_cost_us = 0;
  Workload w = gen_tp(knobs);
  EngineConfig cfg = base_config(w, 2);
  cfg.nested = true;
  SchedulingDecision g1;
  g1.explore = ExploreKind::NS;
  g1.granularity = Granularity::COARSE;
  g1.abort = AbortKind::LAZY;
  SchedulingDecision g2;
  g2.explore = ExploreKind::S;
  g2.granularity = Granularity::COARSE;
  g2.abort = AbortKind::EAGER;
  cfg.forced_nested = {{1, g1}, {2, g2}};
  Engine engine(w.op, cfg, w.registry.get());
  RunResult run = engine.run(w.events);
  OracleResult oracle = serial_oracle(w, knobs.punctuation_interval);
  CHECK(run.final_state == oracle.final_state);
  CHECK(run.committed_events == oracle.committed_events);
  CHECK(run.fsm_violations == 0);
  bool saw_ns = false, saw_s = false;
  for (const std::string& line : run.decision_trace) {
    if (line.find("group=1") != std::string::npos) saw_ns = line.find("explore=NS") != std::string::npos;
    if (line.find("group=2") != std::string::npos) saw_s = line.find("explore=S/") != std::string::npos;
  }
  CHECK(saw_ns);
  CHECK(saw_s);
}

TEST_CASE("the abort-ratio estimate follows observations across batches") {
  WorkloadKnobs knobs;
  knobs.events = 1024;
  knobs.punctuation_interval = 256;
  knobs.abort_ratio = 0.4;
  knobs.udf_cost_us = 0;
  Workload w = gen_sl(knobs);
  EngineConfig cfg = base_config(w);
  cfg.abort_estimate_hint = 0.0;  // no prior: the engine must learn it
  Engine engine(w.op, cfg, w.registry.get());
  RunResult run = engine.run(w.events);
  REQUIRE(run.batches.size() == 4);
  // Later batches see an estimate near the injected ratio.
  CHECK(run.batches[0].props.at(0).abort_ratio == doctest::Approx(0.0));
  CHECK(run.batches[3].props.at(0).abort_ratio == doctest::Approx(0.4).epsilon(0.2));
}
