#include <algorithm>
#include <random>

#include "doctest.h"
#include "streamtx/udf.hpp"

using namespace streamtx;

TEST_CASE("udf registry hands out sequential ids starting at zero") {
  UdfRegistry reg;
  FunctionRef balance_sub =
      reg.register_value([](const UdfContext& c) { return c.reads[0] - c.args[0]; }, 1);
  FunctionRef guard =
      reg.register_condition([](const UdfContext& c) { return c.reads[0] >= c.args[0]; }, 1);
  CHECK(balance_sub.id == 0);
  CHECK(guard.id == 1);
  CHECK(balance_sub.kind == FunctionKind::ValueFunction);
  CHECK(guard.kind == FunctionKind::ConditionFunction);

  Value reads[] = {100};
  Value args[] = {60};
  UdfContext ctx{reads, args};
  CHECK(reg.value_fn(balance_sub)(ctx) == 40);
  CHECK(reg.condition_fn(guard)(ctx));
}

TEST_CASE("resolving an unregistered function id fails") {
  UdfRegistry reg;
  FunctionRef bogus;
  CHECK_THROWS_AS(reg.value_fn(bogus), ConfigError);
  bogus.id = 7;
  CHECK_THROWS_AS(reg.value_fn(bogus), ConfigError);
}

TEST_CASE("kind mismatch and post-seal registration are rejected") {
  UdfRegistry reg;
  FunctionRef v = reg.register_value([](const UdfContext&) { return Value{0}; });
  CHECK_THROWS_AS(reg.condition_fn(v), ConfigError);
  reg.seal();
  CHECK_THROWS_AS(reg.register_value([](const UdfContext&) { return Value{0}; }), ConfigError);
}

TEST_CASE("op_order: timestamp dominates, then statement order") {
  Operation a, b;
  a.txn_ts = 1;
  a.stmt_idx = 0;
  b.txn_ts = 2;
  b.stmt_idx = 0;
  CHECK(op_order(a, b) == std::strong_ordering::less);

  b.txn_ts = 2;
  a.txn_ts = 2;
  a.stmt_idx = 0;
  b.stmt_idx = 1;
  CHECK(op_order(a, b) == std::strong_ordering::less);

  CHECK(op_order(a, a) == std::strong_ordering::equal);
}

TEST_CASE("op_order is a strict total order over a batch") {
  std::mt19937_64 rng(7);
  std::vector<Operation> ops;
  for (Timestamp ts = 1; ts <= 20; ++ts) {
    std::uint32_t len = 1 + rng() % 5;
    for (std::uint32_t s = 0; s < len && ops.size() < 100; ++s) {
      Operation op;
      op.txn_ts = ts;
      op.stmt_idx = s;
      ops.push_back(op);
    }
  }
  // Exhaustive check: antisymmetry and transitivity over all pairs/triples
  // follow from comparing with the induced sort order.
  std::vector<std::size_t> idx(ops.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return op_order(ops[i], ops[j]) == std::strong_ordering::less;
  });
  for (std::size_t i = 0; i + 1 < idx.size(); ++i)
    CHECK(op_order(ops[idx[i]], ops[idx[i + 1]]) == std::strong_ordering::less);
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = 0; j < ops.size(); ++j) {
      auto ij = op_order(ops[i], ops[j]);
      auto ji = op_order(ops[j], ops[i]);
      if (ij == std::strong_ordering::less) CHECK(ji == std::strong_ordering::greater);
      if (ij == std::strong_ordering::equal) CHECK(ji == std::strong_ordering::equal);
    }
}

TEST_CASE("busy wait occupies at least the requested time") {
  auto t0 = std::chrono::steady_clock::now();
  busy_wait_us(200);
  auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  CHECK(elapsed >= 200);
}
