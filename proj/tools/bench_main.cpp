#include <iostream>

#include "CLI11.hpp"
#include "streamtx/harness.hpp"

using namespace streamtx;

int main(int argc, char** argv) {
  CLI::App app{"Transactional stream processing benchmark harness"};
  app.require_subcommand(1);

  harness::RunConfig cfg;
  std::string out_path, format = "csv", thresholds_path, speculation = "auto",
              variant = "DFS";

  CLI::App* run = app.add_subcommand("run", "Run a configured benchmark");
  run->add_option("--workload", cfg.workload,
                  "sl|gs|gs-window|gs-nondet|tp|dynamic:<script>");
  run->add_option("--threads", cfg.threads, "Worker threads");
  run->add_option("--strategy", cfg.strategy, "auto | {S|NS}/{F|C}/{E|L} | nested:<file>");
  run->add_option("--variant", variant, "BFS|DFS (structured exploration)");
  run->add_option("--speculation", speculation, "auto|on|off");
  run->add_option("--theta", cfg.knobs.theta, "Zipf skew");
  run->add_option("--abort", cfg.knobs.abort_ratio, "Injected abort ratio");
  run->add_option("--len", cfg.knobs.txn_len, "Transaction length");
  run->add_option("--cost", cfg.knobs.udf_cost_us, "UDF cost in microseconds");
  run->add_option("--multi", cfg.knobs.multi_access, "State accesses per operation");
  run->add_option("--interval", cfg.knobs.punctuation_interval, "Punctuation interval (T)");
  run->add_option("--keys", cfg.knobs.key_space, "Key space size");
  run->add_option("--seed", cfg.knobs.seed, "RNG seed");
  run->add_option("--batches", cfg.batches, "Run duration in batches");
  run->add_option("--window-size", cfg.knobs.window_size, "Window size (gs-window)");
  run->add_option("--window-period", cfg.knobs.window_trigger_period,
                  "Window trigger period (gs-window)");
  run->add_option("--nondet-fraction", cfg.knobs.nondet_fraction,
                  "Non-deterministic event fraction (gs-nondet)");
  run->add_option("--shuffle", cfg.shuffle_window, "Arrival shuffle displacement bound");
  run->add_flag("--verify", cfg.verify, "Compare against the serial oracle");
  run->add_option("--out", out_path, "Report path");
  run->add_option("--format", format, "csv|json");
  run->add_option("--thresholds", thresholds_path, "Decision threshold file (key=value lines)");
  run->add_option("--events-in", cfg.events_in, "Run events from CSV");
  run->add_option("--events-out", cfg.events_out, "Write generated events to CSV");

  try {
    app.parse(argc, argv);

    if (variant == "BFS") cfg.variant = ExploreVariant::BFS;
    else if (variant == "DFS") cfg.variant = ExploreVariant::DFS;
    else throw ConfigError("--variant must be BFS or DFS");
    if (speculation == "on") cfg.speculation = SpeculationMode::On;
    else if (speculation == "off") cfg.speculation = SpeculationMode::Off;
    else if (speculation == "auto") cfg.speculation = SpeculationMode::Auto;
    else throw ConfigError("--speculation must be auto, on or off");
    if (!thresholds_path.empty())
      cfg.thresholds = DecisionThresholds::from_file(thresholds_path);

    harness::BenchResult result = harness::run_benchmark(cfg);

    for (const std::string& line : result.metrics.decision_trace) std::cout << line << '\n';
    std::cout << "events/s: " << result.metrics.throughput
              << "  p50/p95/p99 ms: " << result.metrics.p50_ms << '/' << result.metrics.p95_ms
              << '/' << result.metrics.p99_ms
              << "  peak mem kb: " << result.metrics.memory_peak_kb << '\n';
    std::cout << "breakdown s: useful=" << result.metrics.useful_s
              << " sync=" << result.metrics.sync_s << " lock=" << result.metrics.lock_s
              << " construct=" << result.metrics.construct_s
              << " explore=" << result.metrics.explore_s << " abort=" << result.metrics.abort_s
              << '\n';
    if (!out_path.empty()) harness::emit_report(result.metrics, cfg, format, out_path);
    if (result.verified) {
      std::cout << result.verify_report.str() << '\n';
      if (!result.verify_report.pass) return 1;
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
