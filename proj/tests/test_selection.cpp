#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "ascl/errors.hpp"
#include "ascl/loss.hpp"
#include "oracles.hpp"

using namespace ascl;

namespace {

using Idx = std::vector<std::size_t>;

oracle::Kind to_kind(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::global:
      return oracle::Kind::global;
    case SelectionStrategy::hard_ls:
      return oracle::Kind::hard;
    case SelectionStrategy::soft_ls:
      return oracle::Kind::soft;
    case SelectionStrategy::leaked_ls:
      return oracle::Kind::leaked;
  }
  return oracle::Kind::global;
}

Idx sorted(Idx v) {
  std::sort(v.begin(), v.end());
  return v;
}

struct Batch {
  Idx y, p, pa;
};

Batch random_batch(Rng& rng, std::size_t n, std::size_t classes) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.y.push_back(rng.below(classes));
    b.p.push_back(rng.below(classes));
    b.pa.push_back(rng.below(classes));
  }
  return b;
}

bool subset(const Idx& a, const Idx& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

}  // namespace

TEST(Selection, HardExampleFromHandEnumeration) {
  const Idx y = {0, 0, 1}, p = {0, 1, 1}, pa = {1, 0, 1};
  const auto sel = select(SelectionStrategy::hard_ls, y, p, pa, 0);
  EXPECT_EQ(sel.positives, (Idx{1, 4}));
  EXPECT_TRUE(sel.negatives.empty());
  EXPECT_EQ(sel.anchor_nat_slot, 0u);
  EXPECT_EQ(sel.anchor_adv_slot, 3u);
}

TEST(Selection, LeakedExampleFromHandEnumeration) {
  const Idx y = {0, 0, 1}, p = {0, 1, 1}, pa = {1, 0, 1};
  const auto sel = select(SelectionStrategy::leaked_ls, y, p, pa, 0);
  EXPECT_EQ(sel.positives, (Idx{4}));
  // Sample 2 is predicted 1 on both views, p_0 = 0.
  EXPECT_TRUE(sel.negatives.empty());
}

TEST(Selection, SingleClassBatchHasNoNegatives) {
  const Idx y(5, 2), p(5, 0), pa(5, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto sel = select(SelectionStrategy::global, y, p, pa, i);
    EXPECT_TRUE(sel.negatives.empty());
    EXPECT_EQ(sel.positives.size(), 8u);
  }
}

TEST(Selection, OutOfRangeAnchorIsContractError) {
  const Idx y = {0, 1}, p = {0, 1}, pa = {0, 1};
  EXPECT_THROW(select(SelectionStrategy::global, y, p, pa, 2), ContractError);
  EXPECT_THROW(select(SelectionStrategy::hard_ls, y, p, Idx{0}, 0), ContractError);
}

TEST(Selection, MatchesSetBuilderOracle) {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const auto b = random_batch(rng, n, 1 + rng.below(4));
    for (auto s : kAllStrategies) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto sel = select(s, b.y, b.p, b.pa, i);
        const auto expect = oracle::selection_sets(to_kind(s), b.y, b.p, b.pa, i);
        EXPECT_EQ(sel.positives, sorted(expect.pos));
        EXPECT_EQ(sel.negatives, sorted(expect.neg));
      }
    }
  }
}

TEST(Selection, GlobalPartitionsThePool) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    const auto b = random_batch(rng, n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto sel = select(SelectionStrategy::global, b.y, b.p, b.pa, i);
      std::multiset<std::size_t> all(sel.positives.begin(), sel.positives.end());
      all.insert(sel.negatives.begin(), sel.negatives.end());
      all.insert(i);
      all.insert(i + n);
      ASSERT_EQ(all.size(), 2 * n);
      std::size_t expect = 0;
      for (std::size_t s : all) EXPECT_EQ(s, expect++);
    }
  }
}

TEST(Selection, StrategiesOnlyFilterGlobalSets) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(14);
    const auto b = random_batch(rng, n, 4);
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = select(SelectionStrategy::global, b.y, b.p, b.pa, i);
      const auto hard = select(SelectionStrategy::hard_ls, b.y, b.p, b.pa, i);
      const auto soft = select(SelectionStrategy::soft_ls, b.y, b.p, b.pa, i);
      const auto leaked = select(SelectionStrategy::leaked_ls, b.y, b.p, b.pa, i);
      EXPECT_TRUE(subset(hard.negatives, g.negatives));
      EXPECT_TRUE(subset(soft.negatives, g.negatives));
      EXPECT_TRUE(subset(leaked.positives, g.positives));
      EXPECT_EQ(leaked.negatives, soft.negatives);
      EXPECT_EQ(hard.positives, g.positives);
      EXPECT_EQ(soft.positives, g.positives);
    }
  }
}

TEST(SelectionStats, BalancedGlobalClosedForm) {
  for (std::size_t m : {1u, 2u, 5u}) {
    for (std::size_t classes : {2u, 3u, 7u}) {
      Idx y;
      for (std::size_t c = 0; c < classes; ++c) y.insert(y.end(), m, c);
      const std::size_t n = y.size();
      const auto s = selection_stats(SelectionStrategy::global, y, y, y);
      EXPECT_DOUBLE_EQ(s.mean_positives, static_cast<double>(2 * (m - 1) + 1));
      EXPECT_DOUBLE_EQ(s.mean_negatives, static_cast<double>(2 * (n - m)));
    }
  }
}

TEST(SelectionStats, UniformTenClassBatchesOf128) {
  // Expected counts: 1 + 2 * 127 / 10 = 26.4 and 2 * 127 * 9 / 10 = 228.6.
  Rng rng(7);
  double pos = 0.0, neg = 0.0;
  const int batches = 1000;
  for (int b = 0; b < batches; ++b) {
    const auto batch = random_batch(rng, 128, 10);
    const auto s = selection_stats(SelectionStrategy::global, batch.y, batch.p, batch.pa);
    pos += s.mean_positives / batches;
    neg += s.mean_negatives / batches;
  }
  EXPECT_NEAR(pos, 26.4, 1.0);
  EXPECT_NEAR(neg, 228.6, 2.0);
}

TEST(SelectionStats, LeakedNeverExceedsGlobal) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = random_batch(rng, 32, 5);
    const auto g = selection_stats(SelectionStrategy::global, b.y, b.p, b.pa);
    const auto l = selection_stats(SelectionStrategy::leaked_ls, b.y, b.p, b.pa);
    EXPECT_LE(l.mean_positives, g.mean_positives);
    EXPECT_LE(l.mean_negatives, g.mean_negatives);
    EXPECT_GE(l.mean_positives, 1.0);
  }
}

TEST(SelectionStrategyNames, RoundTrip) {
  for (auto s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("random"), ConfigError);
}
