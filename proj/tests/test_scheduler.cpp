#include "tblab/scheduler.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace tblab {
namespace {

HostState host_at(std::uint64_t offset, std::int64_t c_sch) {
  HostState h;
  h.bm = BufferMessage(ChunkId(offset));
  h.threshold_chunks = c_sch;
  h.theta = ChunkId(offset);
  return h;
}

BufferMessage holding(std::uint64_t lo, std::uint64_t hi) {
  BufferMessage bm{ChunkId(lo)};
  for (auto x = lo; x <= hi; ++x) bm.write(ChunkId(x));
  return bm;
}

CandidateSet ids(std::initializer_list<std::uint64_t> xs) {
  CandidateSet c;
  for (auto x : xs) c.ids.push_back(ChunkId(x));
  return c;
}

TEST(TBParams, Validation) {
  TBParams tb;
  EXPECT_NO_THROW(tb.validate());
  tb.beta = 0;
  EXPECT_THROW(tb.validate(), Error);
  tb = {};
  tb.w_star = 80;
  EXPECT_THROW(tb.validate(), Error);
  tb = {};
  tb.tau_off = -1;
  EXPECT_THROW(tb.validate(), Error);
}

TEST(Threshold, Quantized) {
  EXPECT_EQ(threshold_chunks(90, 10), 900);
  EXPECT_EQ(threshold_chunks(90, 1), 90);
  EXPECT_EQ(threshold_chunks(2.25, 2), 5);  // 4.5 rounds away from zero
  EXPECT_EQ(threshold_chunks(0.01, 1), 1);
}

TEST(CandidateSet, SetDifference) {
  auto h = host_at(100, 900);
  for (std::uint64_t x = 100; x <= 104; ++x) h.bm.write(ChunkId(x));
  std::vector<BufferMessage> n{holding(100, 110)};
  auto c = candidate_set(h, n);
  ASSERT_EQ(c.size(), 6u);
  EXPECT_EQ(c.min(), ChunkId(105));
  EXPECT_EQ(c.max(), ChunkId(110));
}

TEST(CandidateSet, NoNeighbors) {
  auto h = host_at(100, 900);
  EXPECT_TRUE(candidate_set(h, std::vector<BufferMessage>{}).empty());
}

TEST(CandidateSet, IgnoresChunksBelowOffset) {
  auto h = host_at(100, 900);
  std::vector<BufferMessage> n{holding(90, 102)};
  auto c = candidate_set(h, n);
  EXPECT_EQ(c.ids, ids({100, 101, 102}).ids);
}

TEST(CandidateSet, UnionMatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    auto h = host_at(50 + rng() % 20, 10);
    std::set<std::uint64_t> host_held;
    for (int k = 0; k < 15; ++k) {
      auto x = h.bm.offset().value + rng() % 40;
      h.bm.write(ChunkId(x));
      host_held.insert(x);
    }
    std::vector<BufferMessage> n;
    std::set<std::uint64_t> avail;
    for (int j = 0; j < 2; ++j) {
      BufferMessage bm(ChunkId(40 + rng() % 40));
      for (int k = 0; k < 20; ++k) {
        auto x = bm.offset().value + rng() % 40;
        bm.write(ChunkId(x));
        avail.insert(x);
      }
      n.push_back(bm);
    }
    std::vector<ChunkId> expect;
    for (auto x : avail)
      if (x >= h.bm.offset().value && !host_held.count(x)) expect.push_back(ChunkId(x));
    EXPECT_EQ(candidate_set(h, n).ids, expect);
  }
}

TEST(NextRequest, LowModeFetchesMinimum) {
  auto h = host_at(100, 900);
  for (std::uint64_t x = 100; x < 150; ++x) h.bm.write(ChunkId(x));
  auto d = next_request(h, ids({150, 151, 300}), ChunkId(5000));
  EXPECT_EQ(d.mode, Mode::low);
  ASSERT_EQ(d.fetches.size(), 1u);
  EXPECT_EQ(d.fetches[0], (Fetch{FetchKind::low, ChunkId(150)}));
}

TEST(NextRequest, HighModeFetchesMaximumAndTracker) {
  auto h = host_at(0, 900);
  for (std::uint64_t x = 0; x < 950; ++x) h.bm.write(ChunkId(x));
  h.bm.write(ChunkId(1599));  // |BM| = 1600
  auto d = next_request(h, ids({960, 1500}), ChunkId(2000));
  EXPECT_EQ(d.mode, Mode::high);
  ASSERT_EQ(d.fetches.size(), 2u);
  EXPECT_EQ(d.fetches[0], (Fetch{FetchKind::high, ChunkId(1500)}));
  EXPECT_EQ(d.fetches[1], (Fetch{FetchKind::tracker, ChunkId(2000)}));
}

TEST(NextRequest, IdleWithoutCandidatesOrNewHead) {
  auto h = host_at(0, 10);
  for (std::uint64_t x = 0; x < 20; ++x) h.bm.write(ChunkId(x));
  EXPECT_TRUE(next_request(h, {}, ChunkId(20)).idle());  // s == f + |BM|
  EXPECT_TRUE(next_request(h, {}, std::nullopt).idle());
  EXPECT_FALSE(next_request(h, {}, ChunkId(21)).idle());
}

TEST(NextRequest, LowModeNeverAsksTracker) {
  auto h = host_at(0, 10);
  EXPECT_TRUE(next_request(h, {}, ChunkId(1000)).idle());
}

TEST(NextRequest, ThresholdBoundaryIsLow) {
  auto h = host_at(0, 10);
  for (std::uint64_t x = 0; x < 10; ++x) h.bm.write(ChunkId(x));
  EXPECT_EQ(next_request(h, ids({10, 20}), std::nullopt).mode, Mode::low);
  h.bm.write(ChunkId(10));
  EXPECT_EQ(next_request(h, ids({20}), std::nullopt).mode, Mode::high);
}

TEST(FetchComplete, FillsFirstHole) {
  auto h = host_at(0, 10);
  for (std::uint64_t x : {0, 1, 3, 4}) h.bm.write(ChunkId(x));
  auto after = on_fetch_complete(h, ChunkId(2));
  EXPECT_EQ(after.bm.playable(), 5);
  EXPECT_EQ(after.downloaded, 1);
}

TEST(FetchComplete, FarAboveScopeWidensOnly) {
  auto h = host_at(0, 10);
  for (std::uint64_t x = 0; x < 5; ++x) h.bm.write(ChunkId(x));
  auto after = on_fetch_complete(h, ChunkId(500));
  EXPECT_EQ(after.bm.width(), 500);
  EXPECT_EQ(after.bm.playable(), 5);
}

TEST(FetchComplete, DuplicateLeavesBitmap) {
  auto h = host_at(0, 10);
  h.bm.write(ChunkId(3));
  auto after = on_fetch_complete(h, ChunkId(3));
  EXPECT_EQ(after.bm, h.bm);
  EXPECT_EQ(after.duplicates, 1);
  EXPECT_EQ(after.downloaded, 0);
}

TEST(FetchComplete, BelowOffsetIsWasted) {
  auto h = host_at(100, 10);
  auto after = on_fetch_complete(h, ChunkId(99));
  EXPECT_EQ(after.wasted, 1);
  EXPECT_EQ(after.bm, h.bm);
}

TEST(Drain, BeforeOffsetTime) {
  TBParams tb;
  tb.theta = ChunkId(3600);
  auto h = make_host(tb, 10, 0);
  auto after = drain_tick(h, 69.9, 10);
  EXPECT_EQ(after.bm.offset(), ChunkId(3600));
  EXPECT_FALSE(after.draining);
}

TEST(Drain, LinearInTime) {
  TBParams tb;
  tb.theta = ChunkId(3600);
  auto h = make_host(tb, 10, 0);
  for (std::uint64_t x = 3600; x < 3800; ++x) h.bm.write(ChunkId(x));
  auto after = drain_tick(h, 80, 10);
  EXPECT_EQ(after.bm.offset(), ChunkId(3700));
  EXPECT_TRUE(after.draining);
  EXPECT_EQ(after.misses, 0);
}

TEST(Drain, HeadHoleIsAMiss) {
  TBParams tb;
  tb.theta = ChunkId(0);
  auto h = make_host(tb, 1, 0);
  h.bm.write(ChunkId(1));
  auto after = drain_tick(h, 71, 1);
  EXPECT_EQ(after.bm.offset(), ChunkId(1));
  EXPECT_EQ(after.misses, 1);
  EXPECT_EQ(after.first_miss, ChunkId(0));
  after = drain_tick(after, 72, 1);
  EXPECT_EQ(after.misses, 1);
}

// Exhaustive property check over random small instances.
TEST(SchedulerProperty, RandomStates) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    auto h = host_at(rng() % 50, 1 + static_cast<std::int64_t>(rng() % 30));
    for (int k = 0, n = static_cast<int>(rng() % 40); k < n; ++k) h.bm.write(h.bm.offset() + rng() % 60);
    std::vector<BufferMessage> nb;
    for (int j = 0, n = static_cast<int>(rng() % 4); j < n; ++j) {
      BufferMessage bm(ChunkId(rng() % 80));
      for (int k = 0; k < 30; ++k) bm.write(bm.offset() + rng() % 60);
      nb.push_back(bm);
    }
    std::optional<ChunkId> s;
    if (rng() % 2) s = ChunkId(rng() % 200);
    auto cands = candidate_set(h, nb);
    auto d = next_request(h, cands, s);

    std::optional<ChunkId> lo, hi;
    for (std::uint64_t x = h.bm.offset().value; x < 200; ++x) {
      bool avail = false;
      for (const auto& n : nb) avail = avail || n.holds(ChunkId(x));
      if (avail && !h.bm.holds(ChunkId(x))) {
        if (!lo) lo = ChunkId(x);
        hi = ChunkId(x);
      }
    }
    bool low = h.bm.playable() <= h.threshold_chunks;
    ASSERT_EQ(d.mode, low ? Mode::low : Mode::high);
    if (low) {
      ASSERT_LE(d.fetches.size(), 1u);
      if (lo) {
        ASSERT_EQ(d.fetches[0], (Fetch{FetchKind::low, *lo}));
        ASSERT_GE(lo->value, (h.bm.offset() + static_cast<std::uint64_t>(h.bm.playable())).value);
      } else {
        ASSERT_TRUE(d.idle());
      }
    } else if (hi) {
      ASSERT_EQ(d.fetches[0], (Fetch{FetchKind::high, *hi}));
    }
    for (const auto& f : d.fetches) {
      ASSERT_GE(f.id, h.bm.offset());
      ASSERT_FALSE(h.bm.holds(f.id));
      if (f.kind == FetchKind::tracker) {
        ASSERT_GT(f.id, h.bm.end());
      }
    }
  }
}

// With every chunk of [f, s] available and no draining, low mode fetches
// strictly consecutive IDs, so W, U and V coincide (up to W counting from 0).
TEST(SchedulerProperty, SequentialUnderIdealAvailability) {
  auto h = host_at(1000, 500);
  std::vector<BufferMessage> nb{holding(900, 3000)};
  std::optional<ChunkId> last;
  for (int k = 0; k < 400; ++k) {
    auto d = next_request(h, candidate_set(h, nb), ChunkId(3000));
    ASSERT_EQ(d.mode, Mode::low);
    ASSERT_EQ(d.fetches.size(), 1u);
    if (last) {
      ASSERT_EQ(d.fetches[0].id, *last + 1);
    }
    last = d.fetches[0].id;
    apply_fetch(h, d.fetches[0].id);
    ASSERT_EQ(h.bm.playable(), h.bm.fill());
    ASSERT_EQ(h.bm.width() + 1, h.bm.fill());
  }
}

}  // namespace
}  // namespace tblab
