#include "streamtx/scheduler.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace streamtx {

std::string SchedulingDecision::str() const {
  std::string s = explore == ExploreKind::S ? "S" : "NS";
  s += '/';
  s += explore == ExploreKind::S ? (explore_variant == ExploreVariant::BFS ? "BFS" : "DFS") : "-";
  s += ' ';
  s += "gran=";
  s += granularity == Granularity::FINE ? 'F' : 'C';
  s += " abort=";
  s += abort == AbortKind::EAGER ? 'E' : 'L';
  return s;
}

std::string TPGProperties::str() const {
  std::ostringstream os;
  os << "ld=" << n_ld << ",td=" << n_td << ",pd=" << n_pd << ",skew=" << degree_skew
     << ",cx=" << avg_complexity << ",ar=" << abort_ratio
     << ",cyc=" << (has_cycles_coarse ? 1 : 0);
  return os.str();
}

DecisionThresholds DecisionThresholds::parse(const std::string& text) {
  DecisionThresholds th;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), [](char c) { return std::isspace(c); }),
              key.end());
    double value = std::stod(line.substr(eq + 1));
    if (key == "dep_count_high")
      th.dep_count_high = value;
    else if (key == "skew_low")
      th.skew_low = value;
    else if (key == "pd_low")
      th.pd_low = value;
    else if (key == "complexity_low")
      th.complexity_low = value;
    else if (key == "abort_high")
      th.abort_high = value;
    else
      throw ConfigError("thresholds: unknown key '" + key + "'");
  }
  return th;
}

DecisionThresholds DecisionThresholds::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("thresholds: cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

namespace {

struct GroupFilter {
  bool all = true;
  GroupTag group = 0;
  bool matches(GroupTag g) const { return all || g == group; }
};

TPGProperties measure_one(const TPG& tpg, const UdfRegistry& registry, double abort_estimate,
                          GroupFilter filter) {
  TPGProperties p;
  p.abort_ratio = abort_estimate;

  std::uint64_t degree_sum = 0, degree_max = 0, vertices = 0;
  double cost_sum = 0.0;
  std::vector<std::uint32_t> subset;
  for (std::uint32_t i = 0; i < tpg.vertex_count(); ++i) {
    const TPGVertex& v = tpg.vertex(i);
    if (!filter.matches(v.group)) continue;
    ++vertices;
    if (!filter.all) subset.push_back(i);
    std::uint64_t deg = 0;
    for (const DepEdge& e : v.in) {
      if (e.cls == DependencyClass::LD) {
        if (filter.matches(tpg.vertex(e.vertex).group)) ++p.n_ld;
        continue;
      }
      if (!filter.matches(tpg.vertex(e.vertex).group)) continue;
      ++deg;
      if (e.cls == DependencyClass::TD)
        ++p.n_td;
      else
        ++p.n_pd;
    }
    for (const DepEdge& e : v.out)
      if (e.cls != DependencyClass::LD && filter.matches(tpg.vertex(e.vertex).group)) ++deg;
    degree_sum += deg;
    degree_max = std::max(degree_max, deg);
    if (v.op.value_fn.valid()) cost_sum += v.op.value_fn.cost_us;
    if (v.op.cond_fn.valid()) cost_sum += v.op.cond_fn.cost_us;
  }
  if (vertices > 0) {
    p.avg_complexity = cost_sum / static_cast<double>(vertices);
    double mean = static_cast<double>(degree_sum) / static_cast<double>(vertices);
    p.degree_skew = mean > 0.0 ? static_cast<double>(degree_max) / mean : 1.0;
  }
  p.has_cycles_coarse = coarse_units_cyclic(tpg, filter.all ? nullptr : &subset);
  return p;
}

}  // namespace

TPGProperties measure_properties(const TPG& tpg, const UdfRegistry& registry,
                                 double abort_estimate) {
  return measure_one(tpg, registry, abort_estimate, GroupFilter{});
}

std::map<GroupTag, TPGProperties> measure_properties_grouped(
    const TPG& tpg, const UdfRegistry& registry,
    const std::map<GroupTag, double>& abort_estimates) {
  std::map<GroupTag, TPGProperties> out;
  for (const auto& [group, estimate] : abort_estimates)
    out[group] = measure_one(tpg, registry, estimate, GroupFilter{false, group});
  return out;
}

SchedulingDecision decide(const TPGProperties& p, const DecisionThresholds& th,
                          ExploreVariant variant) {
  SchedulingDecision d;
  double deps = static_cast<double>(p.n_ld + p.n_td + p.n_pd);
  d.explore = (deps >= th.dep_count_high && p.degree_skew <= th.skew_low) ? ExploreKind::S
                                                                          : ExploreKind::NS;
  d.explore_variant = variant;
  d.granularity = (!p.has_cycles_coarse && static_cast<double>(p.n_td) >= th.dep_count_high &&
                   static_cast<double>(p.n_pd) <= th.pd_low)
                      ? Granularity::COARSE
                      : Granularity::FINE;
  d.abort = (p.avg_complexity <= th.complexity_low && p.abort_ratio >= th.abort_high)
                ? AbortKind::LAZY
                : AbortKind::EAGER;
  return d;
}

std::map<GroupTag, SchedulingDecision> decide_nested(
    const std::map<GroupTag, TPGProperties>& groups, const DecisionThresholds& th,
    ExploreVariant variant) {
  std::map<GroupTag, SchedulingDecision> out;
  for (const auto& [group, props] : groups) out[group] = decide(props, th, variant);
  return out;
}

namespace {

// Unit graph + SCC condensation (iterative Tarjan).
struct UnitGraphInfo {
  std::vector<std::int32_t> vertex_unit;  // vertex -> unit index, -1 outside subset
  std::vector<std::vector<std::uint32_t>> adj;
};

UnitGraphInfo unit_graph(const TPG& tpg, const std::vector<SchedulingUnit>& units) {
  UnitGraphInfo g;
  g.vertex_unit.assign(tpg.vertex_count(), -1);
  for (std::size_t u = 0; u < units.size(); ++u)
    for (std::uint32_t v : units[u].members) g.vertex_unit[v] = static_cast<std::int32_t>(u);
  g.adj.resize(units.size());
  for (std::uint32_t v = 0; v < tpg.vertex_count(); ++v) {
    std::int32_t from = g.vertex_unit[v];
    if (from < 0) continue;
    for (const DepEdge& e : tpg.vertex(v).out) {
      if (e.cls == DependencyClass::LD) continue;
      std::int32_t to = g.vertex_unit[e.vertex];
      if (to < 0 || to == from) continue;
      g.adj[from].push_back(static_cast<std::uint32_t>(to));
    }
  }
  return g;
}

std::vector<std::uint32_t> scc_components(const std::vector<std::vector<std::uint32_t>>& adj,
                                          std::uint32_t& scc_count) {
  const std::uint32_t n = static_cast<std::uint32_t>(adj.size());
  constexpr std::uint32_t kUnset = ~0u;
  std::vector<std::uint32_t> index(n, kUnset), low(n, 0), comp(n, kUnset);
  std::vector<std::uint8_t> on_stack(n, 0);
  std::vector<std::uint32_t> stack;
  std::uint32_t next_index = 0;
  scc_count = 0;

  struct Frame {
    std::uint32_t v;
    std::size_t child;
  };
  std::vector<Frame> frames;
  for (std::uint32_t root = 0; root < n; ++root) {
    if (index[root] != kUnset) continue;
    frames.push_back({root, 0});
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!frames.empty()) {
      Frame& f = frames.back();
      if (f.child < adj[f.v].size()) {
        std::uint32_t w = adj[f.v][f.child++];
        if (index[w] == kUnset) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = 1;
          frames.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
      } else {
        if (low[f.v] == index[f.v]) {
          for (;;) {
            std::uint32_t w = stack.back();
            stack.pop_back();
            on_stack[w] = 0;
            comp[w] = scc_count;
            if (w == f.v) break;
          }
          ++scc_count;
        }
        std::uint32_t v = f.v;
        frames.pop_back();
        if (!frames.empty()) low[frames.back().v] = std::min(low[frames.back().v], low[v]);
      }
    }
  }
  return comp;
}

std::vector<SchedulingUnit> trial_coarse_units(const TPG& tpg,
                                               const std::vector<std::uint32_t>* subset) {
  std::vector<std::uint8_t> in_subset;
  if (subset) {
    in_subset.assign(tpg.vertex_count(), 0);
    for (std::uint32_t v : *subset) in_subset[v] = 1;
  }
  auto included = [&](std::uint32_t v) { return !subset || in_subset[v]; };

  std::vector<SchedulingUnit> units;
  std::vector<std::uint8_t> placed(tpg.vertex_count(), 0);
  for (Key k = 0; k < tpg.key_space(); ++k) {
    SchedulingUnit u;
    for (const ListEntry& e : tpg.list(k).entries()) {
      if (e.is_virtual || !included(e.vertex)) continue;
      u.members.push_back(e.vertex);
      placed[e.vertex] = 1;
    }
    if (!u.members.empty()) units.push_back(std::move(u));
  }
  // Operations without a direct list entry (pure window or
  // non-deterministic accesses) get singleton units.
  for (std::uint32_t v = 0; v < tpg.vertex_count(); ++v) {
    if (placed[v] || !included(v)) continue;
    SchedulingUnit u;
    u.members.push_back(v);
    units.push_back(std::move(u));
  }
  return units;
}

void finalize_units(const TPG& tpg, std::vector<SchedulingUnit>& units) {
  for (std::size_t i = 0; i < units.size(); ++i) {
    units[i].unit_id = static_cast<std::uint32_t>(i);
    units[i].stratum = ~0u;
    for (std::uint32_t v : units[i].members)
      units[i].stratum = std::min(units[i].stratum, tpg.vertex(v).stratum);
    if (units[i].members.empty()) units[i].stratum = 0;
  }
}

}  // namespace

std::vector<SchedulingUnit> detect_cycles(const TPG& tpg, std::vector<SchedulingUnit> units) {
  UnitGraphInfo g = unit_graph(tpg, units);
  std::uint32_t scc_count = 0;
  std::vector<std::uint32_t> comp = scc_components(g.adj, scc_count);

  std::vector<SchedulingUnit> merged(scc_count);
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto& m = merged[comp[u]].members;
    m.insert(m.end(), units[u].members.begin(), units[u].members.end());
  }
  // Timestamp order inside a merged unit is always dependency-consistent.
  for (auto& m : merged)
    std::sort(m.members.begin(), m.members.end(), [&](std::uint32_t a, std::uint32_t b) {
      return op_order(tpg.vertex(a).op, tpg.vertex(b).op) == std::strong_ordering::less;
    });
  finalize_units(tpg, merged);
  return merged;
}

bool coarse_units_cyclic(const TPG& tpg, const std::vector<std::uint32_t>* subset) {
  auto units = trial_coarse_units(tpg, subset);
  UnitGraphInfo g = unit_graph(tpg, units);
  std::uint32_t scc_count = 0;
  scc_components(g.adj, scc_count);
  return scc_count != units.size();
}

std::vector<SchedulingUnit> form_units(const TPG& tpg, Granularity granularity,
                                       const std::vector<std::uint32_t>* subset) {
  std::vector<SchedulingUnit> units;
  if (granularity == Granularity::FINE) {
    if (subset) {
      for (std::uint32_t v : *subset) {
        SchedulingUnit u;
        u.members.push_back(v);
        units.push_back(std::move(u));
      }
    } else {
      for (std::uint32_t v = 0; v < tpg.vertex_count(); ++v) {
        SchedulingUnit u;
        u.members.push_back(v);
        units.push_back(std::move(u));
      }
    }
    finalize_units(tpg, units);
    return units;
  }
  units = trial_coarse_units(tpg, subset);
  return detect_cycles(tpg, std::move(units));
}

std::vector<std::vector<std::uint32_t>> assign(const std::vector<SchedulingUnit>& units,
                                               std::size_t n_threads) {
  if (n_threads == 0) throw ConfigError("assign: thread count must be positive");
  std::vector<std::vector<std::uint32_t>> out(n_threads);
  std::vector<std::size_t> load(n_threads, 0);
  // Greedy largest-first keeps the op-count imbalance within the largest
  // unit's size.
  std::vector<std::uint32_t> order(units.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return units[a].members.size() > units[b].members.size();
  });
  for (std::uint32_t u : order) {
    std::size_t target = static_cast<std::size_t>(
        std::min_element(load.begin(), load.end()) - load.begin());
    out[target].push_back(u);
    load[target] += units[u].members.size();
  }
  return out;
}

}  // namespace streamtx
