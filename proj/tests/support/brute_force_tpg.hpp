#pragma once

#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "streamtx/types.hpp"

namespace streamtx::testsupport {

// (from op_id, to op_id, class) with class 0=TD 1=PD 2=LD.
using EdgeSet = std::set<std::tuple<OpId, OpId, int>>;

/// Independent O(n^2) application of the dependency definitions to a batch
/// of transactions, reduced to the per-key adjacency the planner stores:
/// a direct access depends on the latest earlier-timestamp direct access or
/// potential write on its key, and a derived read depends on the latest
/// earlier-timestamp write or potential write. Derivation works from the
/// operations' key specifications alone, never from planner structures.
EdgeSet brute_force_edges(const std::vector<StateTransaction>& txns, std::uint64_t key_space);

/// Parses the planner's line-oriented export into a comparable edge set.
EdgeSet parse_export(const std::string& text);

}  // namespace streamtx::testsupport
