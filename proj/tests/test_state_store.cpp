#include <random>
#include <thread>

#include "doctest.h"
#include "streamtx/state_store.hpp"

using namespace streamtx;

TEST_CASE("init preallocates one snapshot version per key") {
  VersionedStateTable t(3, 100);
  for (Key k = 0; k < 3; ++k) {
    Version v = t.read_version(k, 9);
    CHECK(v.ts == 0);
    CHECK(v.value == 100);
  }
  VersionedStateTable t2(1, 0);
  CHECK(t2.read_version(0, 5).value == 0);
  CHECK_THROWS_AS(VersionedStateTable(0, 1), ConfigError);
}

TEST_CASE("point reads return the largest version strictly below the reader") {
  VersionedStateTable t(1, 100);
  t.write_version(0, 2, 80, 3);
  CHECK(t.read_version(0, 3).value == 80);
  CHECK(t.read_version(0, 2).value == 100);  // own-timestamp versions invisible
  CHECK_THROWS_AS(t.read_version(5, 1), EngineError);
}

TEST_CASE("writes insert in order even when they arrive out of order") {
  VersionedStateTable t(1, 100);
  t.write_version(0, 2, 80, 1);
  t.write_version(0, 1, 90, 2);  // speculative commit of an earlier ts
  auto versions = t.chain(0).snapshot_copy();
  REQUIRE(versions.size() == 3);
  CHECK(versions[1].ts == 1);
  CHECK(versions[1].value == 90);
  CHECK(versions[2].ts == 2);
  CHECK_THROWS_AS(t.write_version(0, 2, 70, 9), EngineError);  // occupied timestamp
}

TEST_CASE("truncate_after removes the suffix and reports it") {
  VersionedStateTable t(1, 100);
  t.write_version(0, 2, 80, 1);
  t.write_version(0, 5, 60, 2);
  auto removed = t.truncate_after(0, 2);
  REQUIRE(removed.size() == 2);
  CHECK(removed[0].ts == 2);
  CHECK(removed[1].ts == 5);
  CHECK(t.chain(0).snapshot_copy().size() == 1);

  CHECK(t.truncate_after(0, 7).empty());
  CHECK_THROWS_AS(t.truncate_after(0, 0), EngineError);  // snapshot is never removable
}

TEST_CASE("window reads cover [trigger - range, trigger)") {
  VersionedStateTable t(1, 100);
  t.write_version(0, 3, 80, 1);
  t.write_version(0, 8, 60, 2);

  Key keys[] = {0};
  auto r = t.window_read(keys, 10, 10);  // lower bound 0 inclusive
  REQUIRE(r[0].size() == 3);
  CHECK(r[0][0].value == 100);
  CHECK(r[0][1].value == 80);
  CHECK(r[0][2].value == 60);

  r = t.window_read(keys, 4, 1);
  REQUIRE(r[0].size() == 1);
  CHECK(r[0][0].value == 80);

  r = t.window_read(keys, 7, 2);  // [5, 7): nothing
  CHECK(r[0].empty());
  CHECK_THROWS_AS(t.window_read(keys, 4, 0), ConfigError);
}

TEST_CASE("gc collapses chains to a re-baselined snapshot") {
  VersionedStateTable t(2, 100);
  t.write_version(0, 2, 80, 1);
  t.gc_batch();
  auto c0 = t.chain(0).snapshot_copy();
  REQUIRE(c0.size() == 1);
  CHECK(c0[0].ts == 0);
  CHECK(c0[0].value == 80);
  auto c1 = t.chain(1).snapshot_copy();
  REQUIRE(c1.size() == 1);
  CHECK(c1[0].value == 100);

  t.begin_batch();
  CHECK_THROWS_AS(t.gc_batch(), EngineError);  // mid-batch
  t.end_batch();
  t.gc_batch();
}

TEST_CASE("truncate-then-gc of a fully aborted writer leaves the snapshot") {
  VersionedStateTable t(1, 100);
  t.write_version(0, 4, 55, 1);
  t.truncate_after(0, 4);
  t.gc_batch();
  CHECK(t.final_values()[0] == 100);
}

TEST_CASE("reads agree with a linear-scan oracle on random chains") {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 50; ++round) {
    VersionedStateTable t(1, 1000);
    std::vector<Version> shadow{{0, 1000, kInvalidOp}};
    std::vector<Timestamp> used{0};
    for (int i = 0; i < 30; ++i) {
      Timestamp ts = 1 + rng() % 100;
      if (std::find(used.begin(), used.end(), ts) != used.end()) continue;
      used.push_back(ts);
      Value val = static_cast<Value>(rng() % 10000);
      t.write_version(0, ts, val, static_cast<OpId>(i));
      shadow.push_back({ts, val, static_cast<OpId>(i)});
    }
    std::sort(shadow.begin(), shadow.end(),
              [](const Version& a, const Version& b) { return a.ts < b.ts; });

    // The chain stays strictly ascending after every mutation.
    auto versions = t.chain(0).snapshot_copy();
    for (std::size_t i = 1; i < versions.size(); ++i) CHECK(versions[i - 1].ts < versions[i].ts);

    for (Timestamp reader = 1; reader <= 101; reader += 7) {
      Version expected{};
      for (const Version& v : shadow)
        if (v.ts < reader) expected = v;
      CHECK(t.read_version(0, reader).value == expected.value);
    }

    // Window reads equal the brute-force filter.
    for (Timestamp trig = 5; trig <= 100; trig += 13) {
      Key keys[] = {0};
      auto got = t.window_read(keys, trig, 10);
      std::vector<Version> expect;
      for (const Version& v : shadow)
        if (v.ts + 10 >= trig && v.ts < trig && v.ts >= (trig >= 10 ? trig - 10 : 0))
          expect.push_back(v);
      REQUIRE(got[0].size() == expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got[0][i].value == expect[i].value);
    }
  }
}

TEST_CASE("concurrent writers on distinct keys do not interfere") {
  VersionedStateTable t(8, 0);
  std::vector<std::thread> pool;
  for (int w = 0; w < 4; ++w)
    pool.emplace_back([&, w] {
      for (Timestamp ts = 1; ts <= 200; ++ts)
        t.write_version(static_cast<Key>(w * 2 + ts % 2), ts, static_cast<Value>(ts), 0);
    });
  for (auto& th : pool) th.join();
  for (Key k = 0; k < 8; ++k) {
    auto versions = t.chain(k).snapshot_copy();
    CHECK(versions.size() == 101);  // snapshot + 100 writes
    for (std::size_t i = 1; i < versions.size(); ++i) CHECK(versions[i - 1].ts < versions[i].ts);
  }
}
