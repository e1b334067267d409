#pragma once

#include <map>
#include <optional>
#include <string>

#include "streamtx/tpg.hpp"
#include "streamtx/udf.hpp"

namespace streamtx {

enum class ExploreKind : std::uint8_t { S, NS };
enum class ExploreVariant : std::uint8_t { BFS, DFS };
enum class Granularity : std::uint8_t { FINE, COARSE };
enum class AbortKind : std::uint8_t { EAGER, LAZY };

/// A point in the 2x2x2 strategy space.
struct SchedulingDecision {
  ExploreKind explore = ExploreKind::NS;
  ExploreVariant explore_variant = ExploreVariant::DFS;  // meaningful under S
  Granularity granularity = Granularity::FINE;
  AbortKind abort = AbortKind::EAGER;

  std::string str() const;
  bool operator==(const SchedulingDecision&) const = default;
};

/// Measured properties of one constructed TPG (per group).
struct TPGProperties {
  double avg_complexity = 0.0;  // mean UDF cost, microseconds
  double degree_skew = 1.0;     // max vertex TD/PD degree over mean
  double abort_ratio = 0.0;     // estimated fraction of aborting vertices
  std::uint64_t n_ld = 0, n_td = 0, n_pd = 0;
  bool has_cycles_coarse = false;

  std::string str() const;
};

/// Decision-model thresholds. The defaults below were calibrated on the
/// GrepSum microbenchmarks at desk scale; config/thresholds.conf ships the
/// same values and can override them per run.
struct DecisionThresholds {
  double dep_count_high = 1536;
  double skew_low = 3.0;
  double pd_low = 128;
  double complexity_low = 25.0;  // microseconds
  double abort_high = 0.5;

  static DecisionThresholds from_file(const std::string& path);
  static DecisionThresholds parse(const std::string& text);
};

/// A unit of work handed to a thread: one vertex under f-schedule, one
/// per-key operation chain (or a merged cycle group) under c-schedule.
struct SchedulingUnit {
  std::uint32_t unit_id = 0;
  std::vector<std::uint32_t> members;  // vertex indices, timestamp order

  // Execution progress; rewound on rollback.
  std::atomic<std::uint32_t> cursor{0};
  std::atomic<std::uint8_t> state{0};  // 0 idle, 1 queued/running, 2 done
  std::uint32_t stratum = 0;           // min member stratum

  SchedulingUnit() = default;
  SchedulingUnit(SchedulingUnit&& o) noexcept
      : unit_id(o.unit_id),
        members(std::move(o.members)),
        cursor(o.cursor.load()),
        state(o.state.load()),
        stratum(o.stratum) {}
};

TPGProperties measure_properties(const TPG& tpg, const UdfRegistry& registry,
                                 double abort_estimate);
/// Per-group property measurement (vertices and edges of that group only).
std::map<GroupTag, TPGProperties> measure_properties_grouped(
    const TPG& tpg, const UdfRegistry& registry, const std::map<GroupTag, double>& abort_estimates);

/// The heuristic decision model: structured exploration when dependencies
/// are plentiful and degrees are balanced; coarse units when TDs dominate,
/// PDs are few and no coarse-unit cycles exist; lazy aborts when vertices
/// are cheap and aborts frequent.
SchedulingDecision decide(const TPGProperties& props, const DecisionThresholds& th,
                          ExploreVariant variant = ExploreVariant::DFS);

std::map<GroupTag, SchedulingDecision> decide_nested(
    const std::map<GroupTag, TPGProperties>& groups, const DecisionThresholds& th,
    ExploreVariant variant = ExploreVariant::DFS);

/// Forms scheduling units over the vertices in `subset` (all vertices when
/// empty). Coarse units follow the key-partitioned lists; strongly
/// connected components of the unit graph are merged and ordered by
/// timestamp.
std::vector<SchedulingUnit> form_units(const TPG& tpg, Granularity granularity,
                                       const std::vector<std::uint32_t>* subset = nullptr);

/// Merges strongly connected components of the unit graph; the result is a
/// DAG. Exposed for tests; form_units applies it already.
std::vector<SchedulingUnit> detect_cycles(const TPG& tpg, std::vector<SchedulingUnit> units);

/// True if the trial coarse units of the TPG contain a dependency cycle.
bool coarse_units_cyclic(const TPG& tpg, const std::vector<std::uint32_t>* subset = nullptr);

/// Per-thread work lists. BFS pulls from per-stratum shared pools, so this
/// is only used by the DFS variant (balanced pre-assignment per stratum)
/// and reported for diagnostics elsewhere.
std::vector<std::vector<std::uint32_t>> assign(const std::vector<SchedulingUnit>& units,
                                               std::size_t n_threads);

}  // namespace streamtx
