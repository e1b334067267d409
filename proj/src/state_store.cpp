#include "streamtx/state_store.hpp"

#include <algorithm>
#include <sstream>

namespace streamtx {

namespace {
struct TsLess {
  bool operator()(const Version& v, Timestamp ts) const { return v.ts < ts; }
  bool operator()(Timestamp ts, const Version& v) const { return ts < v.ts; }
};
}  // namespace

Version VersionChain::read(Timestamp reader_ts) const {
  SharedGuard g(lock_);
  // First version with ts >= reader_ts; its predecessor governs the read.
  auto it = std::lower_bound(versions_.begin(), versions_.end(), reader_ts, TsLess{});
  if (it == versions_.begin()) throw EngineError("version chain: no version before reader ts");
  return *(it - 1);
}

void VersionChain::range(Timestamp lo, Timestamp hi, std::vector<Version>& out) const {
  SharedGuard g(lock_);
  auto it = std::lower_bound(versions_.begin(), versions_.end(), lo, TsLess{});
  for (; it != versions_.end() && it->ts < hi; ++it) out.push_back(*it);
}

void VersionChain::insert(Timestamp ts, Value value, OpId writer) {
  ExclusiveGuard g(lock_);
  auto it = std::lower_bound(versions_.begin(), versions_.end(), ts, TsLess{});
  if (it != versions_.end() && it->ts == ts)
    throw EngineError("version chain: duplicate write at ts " + std::to_string(ts));
  versions_.insert(it, Version{ts, value, writer});
}

std::vector<Version> VersionChain::truncate_after(Timestamp aborted_ts) {
  if (aborted_ts == 0) throw EngineError("version chain: snapshot is not removable");
  ExclusiveGuard g(lock_);
  auto it = std::lower_bound(versions_.begin(), versions_.end(), aborted_ts, TsLess{});
  std::vector<Version> removed(it, versions_.end());
  versions_.erase(it, versions_.end());
  return removed;
}

void VersionChain::collapse_to_snapshot() {
  ExclusiveGuard g(lock_);
  Version latest = versions_.back();
  versions_.assign(1, Version{0, latest.value, kInvalidOp});
}

VersionedStateTable::VersionedStateTable(std::uint64_t keys, Value initial)
    : chains_(keys == 0 ? throw ConfigError("state table: key count must be positive") : keys) {
  for (auto& c : chains_) c.reset(initial);
}

Version VersionedStateTable::read_version(Key key, Timestamp reader_ts) const {
  return chains_[check(key)].read(reader_ts);
}

void VersionedStateTable::write_version(Key key, Timestamp ts, Value value, OpId writer) {
  chains_[check(key)].insert(ts, value, writer);
}

std::vector<Version> VersionedStateTable::truncate_after(Key key, Timestamp aborted_ts) {
  return chains_[check(key)].truncate_after(aborted_ts);
}

std::vector<std::vector<Version>> VersionedStateTable::window_read(std::span<const Key> keys,
                                                                   Timestamp trigger,
                                                                   std::uint64_t range) const {
  if (range == 0) throw ConfigError("window read: range must be positive");
  Timestamp lo = trigger >= range ? trigger - range : 0;
  std::vector<std::vector<Version>> result(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    chains_[check(keys[i])].range(lo, trigger, result[i]);
  return result;
}

void VersionedStateTable::begin_batch() { batch_open_ = true; }

void VersionedStateTable::end_batch() { batch_open_ = false; }

void VersionedStateTable::gc_batch() {
  if (batch_open_) throw EngineError("gc_batch called mid-batch");
  for (auto& c : chains_) c.collapse_to_snapshot();
}

std::vector<Value> VersionedStateTable::final_values() const {
  std::vector<Value> out;
  out.reserve(chains_.size());
  for (const auto& c : chains_) {
    auto versions = c.snapshot_copy();
    out.push_back(versions.back().value);
  }
  return out;
}

std::string VersionedStateTable::dump() const {
  std::ostringstream os;
  for (std::size_t k = 0; k < chains_.size(); ++k) {
    os << k;
    for (const auto& v : chains_[k].snapshot_copy()) os << ' ' << v.ts << ':' << v.value;
    os << '\n';
  }
  return os.str();
}

}  // namespace streamtx
