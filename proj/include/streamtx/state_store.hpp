#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "streamtx/types.hpp"

namespace streamtx {

/// Reader-writer spinlock with writer preference. Chains are tiny critical
/// sections; parking a thread costs more than spinning, but a pending
/// writer must not starve behind a stream of readers.
class RwSpinLock {
 public:
  void lock_shared() const {
    for (;;) {
      if (writers_waiting_.load(std::memory_order_relaxed) == 0) {
        std::int32_t s = state_.load(std::memory_order_relaxed);
        if (s >= 0 && state_.compare_exchange_weak(s, s + 1, std::memory_order_acquire)) return;
      }
#if defined(__x86_64__) || defined(__i386__)
      __builtin_ia32_pause();
#endif
    }
  }
  void unlock_shared() const { state_.fetch_sub(1, std::memory_order_release); }
  void lock() const {
    writers_waiting_.fetch_add(1, std::memory_order_acq_rel);
    for (;;) {
      std::int32_t expected = 0;
      if (state_.compare_exchange_weak(expected, -1, std::memory_order_acquire)) break;
#if defined(__x86_64__) || defined(__i386__)
      __builtin_ia32_pause();
#endif
    }
    writers_waiting_.fetch_sub(1, std::memory_order_acq_rel);
  }
  void unlock() const { state_.store(0, std::memory_order_release); }

 private:
  mutable std::atomic<std::int32_t> state_{0};
  mutable std::atomic<std::int32_t> writers_waiting_{0};
};

template <typename L>
struct SharedGuard {
  explicit SharedGuard(const L& l) : l_(l) { l_.lock_shared(); }
  ~SharedGuard() { l_.unlock_shared(); }
  const L& l_;
};

template <typename L>
struct ExclusiveGuard {
  explicit ExclusiveGuard(const L& l) : l_(l) { l_.lock(); }
  ~ExclusiveGuard() { l_.unlock(); }
  const L& l_;
};

/// One physical copy of a state, timestamped by its writing operation.
struct Version {
  Timestamp ts = 0;
  Value value = 0;
  OpId writer = kInvalidOp;

  bool operator==(const Version&) const = default;
};

/// Timestamp-sorted versions of one key. Insertion is ordered, not
/// appended: speculative execution commits versions out of order.
class VersionChain {
 public:
  void reset(Value snapshot_value) {
    versions_.assign(1, Version{0, snapshot_value, kInvalidOp});
  }

  /// Largest-timestamp version strictly below `reader_ts`.
  Version read(Timestamp reader_ts) const;

  /// All versions with ts in [lo, hi), ascending.
  void range(Timestamp lo, Timestamp hi, std::vector<Version>& out) const;

  void insert(Timestamp ts, Value value, OpId writer);

  /// Removes every version with ts >= aborted_ts except the snapshot;
  /// returns the removed versions.
  std::vector<Version> truncate_after(Timestamp aborted_ts);

  /// Collapses to a single snapshot carrying the latest committed value.
  void collapse_to_snapshot();

  std::vector<Version> snapshot_copy() const {
    SharedGuard g(lock_);
    return versions_;
  }
  std::size_t size() const {
    SharedGuard g(lock_);
    return versions_.size();
  }

 private:
  std::vector<Version> versions_;
  mutable RwSpinLock lock_;
};

/// Preallocated per-key multi-version table shared by all workers.
/// Concurrent access to distinct keys never blocks; per-key mutations are
/// serialized by the chain lock.
class VersionedStateTable {
 public:
  VersionedStateTable(std::uint64_t keys, Value initial);

  Version read_version(Key key, Timestamp reader_ts) const;
  void write_version(Key key, Timestamp ts, Value value, OpId writer);
  std::vector<Version> truncate_after(Key key, Timestamp aborted_ts);
  /// Per requested key, versions in [trigger - range, trigger), ascending.
  std::vector<std::vector<Version>> window_read(std::span<const Key> keys, Timestamp trigger,
                                                std::uint64_t range) const;

  void begin_batch();
  void end_batch();
  /// Re-baselines every chain to a single ts=0 snapshot; only legal once
  /// the batch barrier has been passed.
  void gc_batch();

  std::uint64_t key_count() const { return chains_.size(); }
  const VersionChain& chain(Key key) const { return chains_.at(check(key)); }
  std::vector<Value> final_values() const;

  /// One line per key: `key ts:value ts:value ...` — consumed by the
  /// oracle comparator.
  std::string dump() const;

 private:
  std::uint64_t check(Key key) const {
    if (key >= chains_.size()) throw EngineError("state table: unknown key " + std::to_string(key));
    return key;
  }

  std::vector<VersionChain> chains_;
  bool batch_open_ = false;
};

}  // namespace streamtx
