#include <gtest/gtest.h>

#include <algorithm>

#include "kgpm/ranking.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace kgpm {
namespace {

using namespace oracle;

TEST(Ranking, RankOfMatchesSortOracleOnRandomScores) {
  Xoshiro256 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(50);
    for (auto& s : scores) s = static_cast<double>(rng.below(20));  // many ties
    std::vector<char> mask(50, 0);
    for (auto& m : mask) m = rng.below(5) == 0;
    const auto gold = static_cast<EntityId>(rng.below(50));
    mask[gold] = 0;
    const auto r = make_ranking({Direction::kTail, 0, 0, gold}, scores, mask);
    for (EntityId e = 0; e < 50; ++e) {
      if (mask[e]) {
        EXPECT_THROW(rank_of(r, e), ContractError);
        continue;
      }
      EXPECT_EQ(static_cast<double>(rank_of(r, e)), sort_oracle_rank(scores, mask, e, TieMode::kOptimistic));
      const auto c = tie_counts(scores, mask, e);
      for (auto mode : {TieMode::kPessimistic, TieMode::kMean})
        EXPECT_EQ(tie_rank(c, mode), sort_oracle_rank(scores, mask, e, mode));
      const int k = 1 + static_cast<int>(rng.below(50));
      EXPECT_EQ(top_k(r, e, k), sort_oracle_rank(scores, mask, e, TieMode::kOptimistic) <= k);
    }
  }
}

TEST(Ranking, OrderIsDescendingScoreThenAscendingId) {
  const auto r = make_ranking({Direction::kTail, 0, 0, 0}, {1.0, 3.0, 3.0, 2.0, 3.0});
  EXPECT_EQ(r.order, (std::vector<EntityId>{1, 2, 4, 3, 0}));
}

TEST(Ranking, Errors) {
  const auto r = make_ranking({Direction::kTail, 0, 0, 0}, {1.0, 2.0});
  EXPECT_THROW(rank_of(r, 5), BoundsError);
  EXPECT_THROW(top_k(r, 0, 0), ConfigError);
  EXPECT_THROW(make_ranking({Direction::kTail, 0, 0, 0}, {1.0, std::nan("")}), DataError);
  Xoshiro256 rng(1);
  const auto m = testing::random_model(rng, Method::kDistMult, 2, 14, 55);
  EXPECT_THROW(hits_at_k(m, testing::nations(), {}, 10), ConfigError);
}

TEST(Ranking, HitsAtKMatchesBruteForceOnRandomInstances) {
  Xoshiro256 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testing::random_graph(rng, 8 + rng.below(8), 1 + rng.below(3), 30, 5, 5);
    const auto method = kAllMethods[rng.below(5)];
    auto m = testing::random_model(rng, method, 2, g.num_entities(), g.num_relations());
    if (trial % 4 == 0) {
      // coarse parameters produce exact score ties
      for (auto& v : m.entities.data()) v = std::round(v);
      for (auto& v : m.relations.data()) v = std::round(v);
    }
    const auto qs = queries_from_split(g, Split::kTest);
    const int k = 1 + static_cast<int>(rng.below(6));
    for (bool filtered : {true, false}) {
      for (auto mode : {TieMode::kOptimistic, TieMode::kPessimistic, TieMode::kMean}) {
        const auto r = hits_at_k(m, g, qs, k, {filtered, mode, 1});
        const auto oracle = brute_hits(m, g, qs, k, filtered, mode);
        EXPECT_EQ(r.in_top_k, oracle);
        EXPECT_EQ(r.hit_count, static_cast<std::size_t>(std::count(oracle.begin(), oracle.end(), 1)));
      }
    }
  }
}

TEST(Ranking, FilteredHitsNeverBelowRawHits) {
  Xoshiro256 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_graph(rng, 10, 2, 40, 5, 8);
    const auto m = testing::random_model(rng, kAllMethods[trial % 5], 3, g.num_entities(), g.num_relations());
    const auto qs = queries_from_split(g, Split::kTest);
    for (int k : {1, 3, 5}) {
      const auto f = hits_at_k(m, g, qs, k, {true, TieMode::kOptimistic, 1});
      const auto r = hits_at_k(m, g, qs, k, {false, TieMode::kOptimistic, 1});
      EXPECT_GE(f.hits_at_k, r.hits_at_k);
      for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_LE(f.ranks[i], r.ranks[i]);
    }
  }
}

TEST(Ranking, TieModesOrdered) {
  Xoshiro256 rng(24);
  const auto& g = testing::nations();
  auto m = testing::random_model(rng, Method::kDistMult, 2, g.num_entities(), g.num_relations());
  for (auto& v : m.entities.data()) v = std::round(v);
  const auto qs = queries_from_split(g, Split::kTest);
  const auto o = hits_at_k(m, g, qs, 3, {true, TieMode::kOptimistic, 1});
  const auto me = hits_at_k(m, g, qs, 3, {true, TieMode::kMean, 1});
  const auto p = hits_at_k(m, g, qs, 3, {true, TieMode::kPessimistic, 1});
  EXPECT_GE(o.hits_at_k, me.hits_at_k);
  EXPECT_GE(me.hits_at_k, p.hits_at_k);
  EXPECT_GT(o.tied_queries, 0u);
}

TEST(Ranking, ThreadCountDoesNotChangeResults) {
  Xoshiro256 rng(25);
  const auto& g = testing::nations();
  const auto m = testing::random_model(rng, Method::kComplEx, 4, g.num_entities(), g.num_relations());
  const auto qs = queries_from_split(g, Split::kTest);
  const auto a = hits_at_k(m, g, qs, 5, {true, TieMode::kOptimistic, 1});
  const auto b = hits_at_k(m, g, qs, 5, {true, TieMode::kOptimistic, 4});
  EXPECT_EQ(a.ranks, b.ranks);
  EXPECT_EQ(a.in_top_k, b.in_top_k);
}

TEST(Ranking, GoldAloneIsRankOne) {
  const auto r = make_ranking({Direction::kHead, 0, 0, 2}, {9.0, 8.0, 1.0}, {1, 1, 0});
  EXPECT_EQ(rank_of(r, 2), 1u);
  EXPECT_EQ(r.num_candidates(), 1u);
}

}  // namespace
}  // namespace kgpm
