#include "streamtx/udf.hpp"

namespace streamtx {

FunctionRef UdfRegistry::add(Entry e, FunctionKind kind, std::uint32_t arity,
                             std::uint32_t cost_us) {
  if (sealed_) throw ConfigError("UdfRegistry: registration after seal()");
  FunctionRef ref;
  ref.id = static_cast<std::uint32_t>(entries_.size());
  ref.kind = kind;
  ref.arity = arity;
  ref.cost_us = cost_us;
  entries_.push_back(std::move(e));
  return ref;
}

FunctionRef UdfRegistry::register_value(ValueFn fn, std::uint32_t arity, std::uint32_t cost_us) {
  Entry e;
  e.kind = FunctionKind::ValueFunction;
  e.value = std::move(fn);
  return add(std::move(e), FunctionKind::ValueFunction, arity, cost_us);
}

FunctionRef UdfRegistry::register_condition(CondFn fn, std::uint32_t arity,
                                            std::uint32_t cost_us) {
  Entry e;
  e.kind = FunctionKind::ConditionFunction;
  e.cond = std::move(fn);
  return add(std::move(e), FunctionKind::ConditionFunction, arity, cost_us);
}

FunctionRef UdfRegistry::register_window(AggFn fn, std::uint32_t cost_us) {
  Entry e;
  e.kind = FunctionKind::WindowAggregate;
  e.agg = std::move(fn);
  return add(std::move(e), FunctionKind::WindowAggregate, 0, cost_us);
}

FunctionRef UdfRegistry::register_selector(SelectorFn fn, std::uint32_t cost_us) {
  Entry e;
  e.kind = FunctionKind::KeySelector;
  e.selector = std::move(fn);
  return add(std::move(e), FunctionKind::KeySelector, 0, cost_us);
}

const UdfRegistry::Entry& UdfRegistry::resolve(const FunctionRef& ref,
                                               FunctionKind expected) const {
  if (!ref.valid() || ref.id >= entries_.size())
    throw ConfigError("UdfRegistry: unregistered function id");
  const Entry& e = entries_[ref.id];
  if (e.kind != expected) throw ConfigError("UdfRegistry: function kind mismatch");
  return e;
}

const ValueFn& UdfRegistry::value_fn(const FunctionRef& ref) const {
  return resolve(ref, FunctionKind::ValueFunction).value;
}

const CondFn& UdfRegistry::condition_fn(const FunctionRef& ref) const {
  return resolve(ref, FunctionKind::ConditionFunction).cond;
}

const AggFn& UdfRegistry::window_fn(const FunctionRef& ref) const {
  return resolve(ref, FunctionKind::WindowAggregate).agg;
}

const SelectorFn& UdfRegistry::selector_fn(const FunctionRef& ref) const {
  return resolve(ref, FunctionKind::KeySelector).selector;
}

}  // namespace streamtx
