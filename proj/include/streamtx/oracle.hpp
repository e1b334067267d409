#pragma once

#include "streamtx/workloads.hpp"

namespace streamtx {

struct OracleResult {
  std::vector<Value> final_state;
  std::vector<std::uint64_t> committed_events;  // sorted
  std::vector<OutputRecord> outputs;            // event-id order
  std::string final_table_dump;
};

/// Reference executor: one transaction at a time in strict timestamp
/// order, single thread, plain per-key version lists. Transactions whose
/// condition fails are skipped atomically. Deliberately shares no code
/// with the planner/scheduler/executor path it is used to check.
OracleResult serial_oracle(const workloads::Workload& w, std::uint32_t punctuation_interval);

}  // namespace streamtx
