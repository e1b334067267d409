#include "streamtx/harness.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace streamtx {
namespace harness {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

double percentile(std::vector<std::uint64_t>& ns, double p) {
  if (ns.empty()) return 0.0;
  std::size_t idx = static_cast<std::size_t>(p * static_cast<double>(ns.size() - 1));
  std::nth_element(ns.begin(), ns.begin() + idx, ns.end());
  return static_cast<double>(ns[idx]) / 1e6;  // ms
}

}  // namespace

std::string VerifyReport::str() const {
  if (pass) return "verify: pass";
  std::ostringstream os;
  os << "verify: FAIL (" << diffs.size() << " divergences shown)";
  for (const auto& d : diffs) os << "\n  " << d;
  return os.str();
}

VerifyReport verify(const RunResult& engine, const OracleResult& oracle) {
  VerifyReport report;
  auto diff = [&](std::string line) {
    report.pass = false;
    if (report.diffs.size() < 20) report.diffs.push_back(std::move(line));
  };

  if (engine.final_state.size() != oracle.final_state.size()) {
    diff("state size mismatch: engine " + std::to_string(engine.final_state.size()) +
         " oracle " + std::to_string(oracle.final_state.size()));
  } else {
    for (std::size_t k = 0; k < engine.final_state.size(); ++k)
      if (engine.final_state[k] != oracle.final_state[k])
        diff("state[" + std::to_string(k) + "]: engine " +
             std::to_string(engine.final_state[k]) + " oracle " +
             std::to_string(oracle.final_state[k]));
  }

  if (engine.final_table_dump != oracle.final_table_dump && report.pass)
    diff("final table dump differs byte-wise");

  if (engine.committed_events != oracle.committed_events) {
    std::vector<std::uint64_t> only_engine, only_oracle;
    std::set_difference(engine.committed_events.begin(), engine.committed_events.end(),
                        oracle.committed_events.begin(), oracle.committed_events.end(),
                        std::back_inserter(only_engine));
    std::set_difference(oracle.committed_events.begin(), oracle.committed_events.end(),
                        engine.committed_events.begin(), engine.committed_events.end(),
                        std::back_inserter(only_oracle));
    for (std::uint64_t id : only_engine) diff("event " + std::to_string(id) + " committed only by engine");
    for (std::uint64_t id : only_oracle) diff("event " + std::to_string(id) + " committed only by oracle");
  }

  if (engine.outputs.size() != oracle.outputs.size()) {
    diff("output count mismatch: engine " + std::to_string(engine.outputs.size()) + " oracle " +
         std::to_string(oracle.outputs.size()));
  } else {
    for (std::size_t i = 0; i < engine.outputs.size(); ++i) {
      const OutputRecord& a = engine.outputs[i];
      const OutputRecord& b = oracle.outputs[i];
      if (a.event_id != b.event_id || a.failed != b.failed) {
        diff("output " + std::to_string(a.event_id) + ": marker engine=" +
             (a.failed ? "failed" : "ok") + " oracle=" + (b.failed ? "failed" : "ok"));
        continue;
      }
      if (!a.failed && a.values != b.values) {
        std::string line = "output " + std::to_string(a.event_id) + ": values differ; engine=[";
        for (Value v : a.values) line += std::to_string(v) + " ";
        line += "] oracle=[";
        for (Value v : b.values) line += std::to_string(v) + " ";
        line += "]";
        diff(line);
      }
    }
  }
  return report;
}

std::optional<SchedulingDecision> parse_strategy(const std::string& spec,
                                                 ExploreVariant variant) {
  if (spec == "auto") return std::nullopt;
  SchedulingDecision d;
  d.explore_variant = variant;
  std::istringstream is(spec);
  std::string tok;
  std::vector<std::string> parts;
  while (std::getline(is, tok, '/')) parts.push_back(tok);
  if (parts.size() != 3) throw ConfigError("strategy: expected {S|NS}/{F|C}/{E|L}, got " + spec);
  if (parts[0] == "S") d.explore = ExploreKind::S;
  else if (parts[0] == "NS") d.explore = ExploreKind::NS;
  else throw ConfigError("strategy: bad exploration '" + parts[0] + "'");
  if (parts[1] == "F") d.granularity = Granularity::FINE;
  else if (parts[1] == "C") d.granularity = Granularity::COARSE;
  else throw ConfigError("strategy: bad granularity '" + parts[1] + "'");
  if (parts[2] == "E") d.abort = AbortKind::EAGER;
  else if (parts[2] == "L") d.abort = AbortKind::LAZY;
  else throw ConfigError("strategy: bad abort mode '" + parts[2] + "'");
  return d;
}

std::map<GroupTag, SchedulingDecision> parse_nested_file(const std::string& text,
                                                         ExploreVariant variant) {
  std::map<GroupTag, SchedulingDecision> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    std::optional<GroupTag> group;
    SchedulingDecision d;
    d.explore_variant = variant;
    bool any = false;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw ConfigError("nested file: expected key=value, got '" + tok + "'");
      std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      any = true;
      if (key == "group") group = static_cast<GroupTag>(std::stoul(val));
      else if (key == "explore") {
        if (val == "S") d.explore = ExploreKind::S;
        else if (val == "NS") d.explore = ExploreKind::NS;
        else throw ConfigError("nested file: bad explore '" + val + "'");
      } else if (key == "variant") {
        if (val == "BFS") d.explore_variant = ExploreVariant::BFS;
        else if (val == "DFS") d.explore_variant = ExploreVariant::DFS;
        else throw ConfigError("nested file: bad variant '" + val + "'");
      } else if (key == "gran") {
        if (val == "F") d.granularity = Granularity::FINE;
        else if (val == "C") d.granularity = Granularity::COARSE;
        else throw ConfigError("nested file: bad granularity '" + val + "'");
      } else if (key == "abort") {
        if (val == "E") d.abort = AbortKind::EAGER;
        else if (val == "L") d.abort = AbortKind::LAZY;
        else throw ConfigError("nested file: bad abort '" + val + "'");
      } else {
        throw ConfigError("nested file: unknown key '" + key + "'");
      }
    }
    if (!any) continue;
    if (!group) throw ConfigError("nested file: line without group=");
    out[*group] = d;
  }
  return out;
}

workloads::Workload build_workload(const RunConfig& cfg) {
  workloads::WorkloadKnobs knobs = cfg.knobs;
  if (knobs.events == 0) knobs.events = cfg.batches * knobs.punctuation_interval;

  workloads::Workload w;
  if (cfg.workload.rfind("dynamic:", 0) == 0) {
    auto phases = workloads::parse_dynamic_script(read_file(cfg.workload.substr(8)));
    w = workloads::gen_dynamic(phases, knobs);
  } else {
    w = workloads::make_workload(cfg.workload, knobs);
  }
  if (!cfg.events_in.empty()) w.events = workloads::events_from_csv(read_file(cfg.events_in));
  if (cfg.shuffle_window > 0) {
    std::mt19937_64 rng(knobs.seed ^ 0x9e3779b97f4a7c15ull);
    workloads::shuffle_arrival(w.events, cfg.shuffle_window, knobs.punctuation_interval, rng);
  }
  if (!cfg.events_out.empty()) {
    std::ofstream f(cfg.events_out);
    if (!f) throw ConfigError("cannot write " + cfg.events_out);
    f << workloads::events_to_csv(w);
  }
  return w;
}

EngineConfig engine_config(const RunConfig& cfg, const workloads::Workload& w) {
  EngineConfig ec;
  ec.key_space = w.key_space;
  ec.initial_value = w.initial_value;
  ec.threads = cfg.threads;
  ec.punctuation_interval = cfg.knobs.punctuation_interval;
  ec.thresholds = cfg.thresholds;
  ec.explore_variant = cfg.variant;
  ec.speculation = cfg.speculation;
  ec.collect_breakdown = cfg.collect_breakdown;
  ec.abort_estimate_hint = cfg.knobs.abort_ratio;

  if (cfg.strategy.rfind("nested:", 0) == 0) {
    ec.forced_nested = parse_nested_file(read_file(cfg.strategy.substr(7)), cfg.variant);
    ec.nested = true;
  } else {
    ec.forced = parse_strategy(cfg.strategy, cfg.variant);
  }
  if (w.name == "tp") {
    ec.nested = ec.nested || cfg.strategy == "auto";
    ec.group_abort_hints[1] = std::max(0.3, cfg.knobs.abort_ratio);
    ec.group_abort_hints[2] = 0.0;
  }
  return ec;
}

Metrics collect_metrics(const RunResult& run) {
  Metrics m;
  std::vector<std::uint64_t> all_lat;
  std::uint64_t total_events = 0, total_wall_ns = 0;
  for (const BatchReport& b : run.batches) {
    BatchRow row;
    row.batch = b.batch;
    row.events = b.events;
    row.throughput =
        b.wall_ns > 0 ? static_cast<double>(b.events) / (static_cast<double>(b.wall_ns) / 1e9)
                      : 0.0;
    std::vector<std::uint64_t> lat = b.latencies_ns;
    row.p50_ms = percentile(lat, 0.50);
    row.p95_ms = percentile(lat, 0.95);
    row.p99_ms = percentile(lat, 0.99);
    row.useful_s = static_cast<double>(b.stats.breakdown.useful) / 1e9;
    row.sync_s = static_cast<double>(b.stats.breakdown.sync) / 1e9;
    row.lock_s = static_cast<double>(b.stats.breakdown.lock) / 1e9;
    row.construct_s = static_cast<double>(b.stats.breakdown.construct) / 1e9;
    row.explore_s = static_cast<double>(b.stats.breakdown.explore) / 1e9;
    row.abort_s = static_cast<double>(b.stats.breakdown.abort) / 1e9;
    std::ostringstream dec;
    for (const auto& [g, d] : b.decisions) {
      if (dec.tellp() > 0) dec << '|';
      dec << (d.explore == ExploreKind::S
                  ? (d.explore_variant == ExploreVariant::BFS ? "S:BFS" : "S:DFS")
                  : "NS")
          << '/' << (d.granularity == Granularity::FINE ? 'F' : 'C') << '/'
          << (d.abort == AbortKind::EAGER ? 'E' : 'L');
    }
    row.decision = dec.str();
    m.useful_s += row.useful_s;
    m.sync_s += row.sync_s;
    m.lock_s += row.lock_s;
    m.construct_s += row.construct_s;
    m.explore_s += row.explore_s;
    m.abort_s += row.abort_s;
    total_events += b.events;
    total_wall_ns += b.wall_ns;
    all_lat.insert(all_lat.end(), b.latencies_ns.begin(), b.latencies_ns.end());
    m.rows.push_back(std::move(row));
  }
  m.throughput = total_wall_ns > 0
                     ? static_cast<double>(total_events) / (static_cast<double>(total_wall_ns) / 1e9)
                     : 0.0;
  m.p50_ms = percentile(all_lat, 0.50);
  m.p95_ms = percentile(all_lat, 0.95);
  m.p99_ms = percentile(all_lat, 0.99);
  m.memory_peak_kb = memory_peak_kb();
  m.decision_trace = run.decision_trace;
  return m;
}

std::uint64_t memory_peak_kb() {
  std::ifstream f("/proc/self/status");
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream is(line.substr(6));
      std::uint64_t kb = 0;
      is >> kb;
      return kb;
    }
  }
  return 0;
}

BenchResult run_benchmark(const RunConfig& cfg) {
  workloads::Workload w = build_workload(cfg);
  Engine engine(w.op, engine_config(cfg, w), w.registry.get());
  BenchResult result;
  result.run = engine.run(w.events);
  result.metrics = collect_metrics(result.run);
  if (cfg.verify) {
    OracleResult oracle = serial_oracle(w, cfg.knobs.punctuation_interval);
    result.verify_report = verify(result.run, oracle);
    result.verified = true;
  }
  return result;
}

void emit_report(const Metrics& metrics, const RunConfig& cfg, const std::string& format,
                 const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write report to " + path);
  if (format == "csv") {
    f << "batch,events,throughput,p50,p95,p99,useful,sync,lock,construct,explore,abort,decision\n";
    for (const BatchRow& r : metrics.rows)
      f << r.batch << ',' << r.events << ',' << r.throughput << ',' << r.p50_ms << ','
        << r.p95_ms << ',' << r.p99_ms << ',' << r.useful_s << ',' << r.sync_s << ',' << r.lock_s
        << ',' << r.construct_s << ',' << r.explore_s << ',' << r.abort_s << ',' << r.decision
        << '\n';
    return;
  }
  if (format != "json") throw ConfigError("unknown report format '" + format + "'");
  nlohmann::json j;
  j["config"] = {{"workload", cfg.workload},
                 {"threads", cfg.threads},
                 {"strategy", cfg.strategy},
                 {"seed", cfg.knobs.seed},
                 {"theta", cfg.knobs.theta},
                 {"abort", cfg.knobs.abort_ratio},
                 {"len", cfg.knobs.txn_len},
                 {"cost", cfg.knobs.udf_cost_us},
                 {"multi", cfg.knobs.multi_access},
                 {"interval", cfg.knobs.punctuation_interval},
                 {"batches", cfg.batches}};
  j["throughput"] = metrics.throughput;
  j["latency_ms"] = {{"p50", metrics.p50_ms}, {"p95", metrics.p95_ms}, {"p99", metrics.p99_ms}};
  j["breakdown_s"] = {{"useful", metrics.useful_s}, {"sync", metrics.sync_s},
                      {"lock", metrics.lock_s},     {"construct", metrics.construct_s},
                      {"explore", metrics.explore_s}, {"abort", metrics.abort_s}};
  j["memory_peak_kb"] = metrics.memory_peak_kb;
  j["decision_trace"] = metrics.decision_trace;
  nlohmann::json rows = nlohmann::json::array();
  for (const BatchRow& r : metrics.rows)
    rows.push_back({{"batch", r.batch},
                    {"events", r.events},
                    {"throughput", r.throughput},
                    {"p50", r.p50_ms},
                    {"p95", r.p95_ms},
                    {"p99", r.p99_ms},
                    {"useful", r.useful_s},
                    {"sync", r.sync_s},
                    {"lock", r.lock_s},
                    {"construct", r.construct_s},
                    {"explore", r.explore_s},
                    {"abort", r.abort_s},
                    {"decision", r.decision}});
  j["batches"] = std::move(rows);
  f << j.dump(2) << '\n';
}

}  // namespace harness
}  // namespace streamtx
