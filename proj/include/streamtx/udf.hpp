#pragma once

#include <chrono>
#include <functional>
#include <span>

#include "streamtx/types.hpp"

namespace streamtx {

/// Inputs handed to value/condition/selector functions. `reads` holds the
/// values of the operation's read keys in declaration order (for writes,
/// index 0 is the target key's current value when no explicit read list is
/// given); `args` are the immediate arguments captured from the event.
struct UdfContext {
  std::span<const Value> reads;
  std::span<const Value> args;
};

using ValueFn = std::function<Value(const UdfContext&)>;
using CondFn = std::function<bool(const UdfContext&)>;
// Window aggregate over the values of all versions in range, ordered by
// read key then ascending timestamp.
using AggFn = std::function<Value(std::span<const Value>)>;
using SelectorFn = std::function<std::vector<Key>(const UdfContext&)>;

/// Write-once-before-run function table. Registration hands out sequential
/// ids; lookups are read-only and thread-safe once sealed.
class UdfRegistry {
 public:
  FunctionRef register_value(ValueFn fn, std::uint32_t arity = 1, std::uint32_t cost_us = 0);
  FunctionRef register_condition(CondFn fn, std::uint32_t arity = 1, std::uint32_t cost_us = 0);
  FunctionRef register_window(AggFn fn, std::uint32_t cost_us = 0);
  FunctionRef register_selector(SelectorFn fn, std::uint32_t cost_us = 0);

  const ValueFn& value_fn(const FunctionRef& ref) const;
  const CondFn& condition_fn(const FunctionRef& ref) const;
  const AggFn& window_fn(const FunctionRef& ref) const;
  const SelectorFn& selector_fn(const FunctionRef& ref) const;

  void seal() { sealed_ = true; }
  bool sealed() const { return sealed_; }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    FunctionKind kind;
    ValueFn value;
    CondFn cond;
    AggFn agg;
    SelectorFn selector;
  };

  FunctionRef add(Entry e, FunctionKind kind, std::uint32_t arity, std::uint32_t cost_us);
  const Entry& resolve(const FunctionRef& ref, FunctionKind expected) const;

  std::vector<Entry> entries_;
  bool sealed_ = false;
};

/// Occupies the core for `us` microseconds; models UDF complexity the way
/// an actual computation would, unlike sleeping.
inline void busy_wait_us(std::uint32_t us) {
  if (us == 0) return;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::microseconds(us);
  while (std::chrono::steady_clock::now() < deadline) {
    // spin
  }
}

}  // namespace streamtx
