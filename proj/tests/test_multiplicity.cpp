#include <gtest/gtest.h>

#include <algorithm>

#include "kgpm/checkpoint.hpp"
#include "kgpm/multiplicity.hpp"
#include "test_util.hpp"

namespace kgpm {
namespace {

using Flags = std::vector<char>;

TEST(ConflictMatrix, ToyEnumeration) {
  const Flags base{1, 1, 0, 0};
  const std::vector<Flags> comps{{1, 0, 0, 0}, {1, 1, 0, 1}, {1, 1, 0, 0}};
  const auto m = conflict_matrix(base, comps);
  EXPECT_EQ(m.cells, (std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0}));
  EXPECT_EQ(max_conflict_flags(m), (Flags{0, 1, 0, 1}));
  EXPECT_DOUBLE_EQ(ambiguity(m), 0.5);
  EXPECT_DOUBLE_EQ(discrepancy(m), 0.25);
}

TEST(ConflictMatrix, Errors) {
  const Flags base{1, 0};
  EXPECT_THROW(conflict_matrix(base, std::vector<Flags>{{1}}), ContractError);
  EXPECT_THROW(ambiguity(conflict_matrix(base, {})), ContractError);
  EXPECT_THROW(discrepancy(conflict_matrix(Flags{}, std::vector<Flags>{{}})), ConfigError);
}

struct RandomFlags {
  Flags base;
  std::vector<Flags> comps;
};

RandomFlags random_flags(Xoshiro256& rng) {
  const std::size_t n = 1 + rng.below(40), m = 1 + rng.below(8);
  // Per-model hit probabilities spread the conflict rates.
  auto draw = [&](double p) {
    Flags f(n);
    for (auto& v : f) v = rng.uniform01() < p;
    return f;
  };
  RandomFlags out{draw(rng.uniform01()), {}};
  for (std::size_t c = 0; c < m; ++c) out.comps.push_back(draw(rng.uniform01()));
  return out;
}

TEST(ConflictMatrix, AmbiguityAndDiscrepancyAgainstOracle) {
  Xoshiro256 rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto f = random_flags(rng);
    const auto m = conflict_matrix(f.base, f.comps);
    const std::size_t n = f.base.size();
    std::size_t any = 0, worst = 0, total = 0;
    for (std::size_t q = 0; q < n; ++q) {
      bool hit = false;
      for (const auto& c : f.comps) hit |= c[q] != f.base[q];
      any += hit;
    }
    for (const auto& c : f.comps) {
      std::size_t s = 0;
      for (std::size_t q = 0; q < n; ++q) s += c[q] != f.base[q];
      worst = std::max(worst, s);
      total += s;
    }
    const double a = ambiguity(m), d = discrepancy(m);
    EXPECT_DOUBLE_EQ(a, static_cast<double>(any) / n);
    EXPECT_DOUBLE_EQ(d, static_cast<double>(worst) / n);
    EXPECT_GE(a, d);
    EXPECT_LE(a, std::min(1.0, static_cast<double>(total) / n));
  }
}

TEST(Bound, Values) {
  EXPECT_NEAR(discrepancy_bound(0.518, 0.01).raw, 0.974, 1e-12);
  EXPECT_NEAR(discrepancy_bound(0.518, 0.01).clamped, 0.974, 1e-12);
  const auto b = discrepancy_bound(0.2, 0.05);
  EXPECT_NEAR(b.raw, 1.65, 1e-12);
  EXPECT_EQ(b.clamped, 1.0);
  EXPECT_THROW(discrepancy_bound(1.5, 0.0), ContractError);
  EXPECT_THROW(discrepancy_bound(0.5, -0.1), ContractError);
}

// Any competitor whose Hits@K trails the baseline by at most ε on the same
// queries conflicts on at most 2(1 - H) + ε of them.
TEST(Bound, HoldsOnRandomFlagsWithRealizedTolerance) {
  Xoshiro256 rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto f = random_flags(rng);
    const double n = static_cast<double>(f.base.size());
    const double h = std::count(f.base.begin(), f.base.end(), 1) / n;
    double eps = 0.0;
    for (const auto& c : f.comps) eps = std::max(eps, h - std::count(c.begin(), c.end(), 1) / n);
    EXPECT_LE(discrepancy(conflict_matrix(f.base, f.comps)), discrepancy_bound(h, eps).raw + 1e-12);
  }
}

TEST(Tolerance, IntegerCountComparison) {
  EXPECT_TRUE(within_tolerance(10, 10, 100, 0.0));
  EXPECT_TRUE(within_tolerance(10, 11, 100, 0.0));
  EXPECT_FALSE(within_tolerance(10, 9, 100, 0.0));
  EXPECT_TRUE(within_tolerance(10, 9, 100, 0.01));
  EXPECT_FALSE(within_tolerance(10, 8, 100, 0.01));
  // 0.07 * 100 is not exactly 7 in binary.
  EXPECT_TRUE(within_tolerance(50, 43, 100, 0.07));
}

TEST(Seeds, DerivedAndDistinct) {
  EXPECT_EQ(competitor_seed(7, 3), derive_seed(7, "competitor", 3));
  EXPECT_NE(competitor_seed(7, 3), competitor_seed(7, 4));
  EXPECT_NE(competitor_seed(7, 3), competitor_seed(8, 3));
  EXPECT_EQ(aggregation_seed(7, 11, 2), derive_seed(7, "aggregate", 11, 2));
  EXPECT_NE(aggregation_seed(7, 11, 2), aggregation_seed(7, 12, 2));
}

LevelSetOptions nations_options(std::size_t threads = 1) {
  LevelSetOptions o;
  o.k = 3;
  o.master_seed = 99;
  o.threads = threads;
  return o;
}

const LevelSet& nations_pool() {
  static const LevelSet pool =
      train_candidate_pool(testing::nations(), testing::small_config(Method::kDistMult, 8), 8, nations_options(4));
  return pool;
}

TEST(LevelSet, InfiniteToleranceAdmitsEveryCandidate) {
  const auto& p = nations_pool();
  EXPECT_EQ(p.competitors.size(), 8u);
  EXPECT_EQ(p.attempts, 8u);
  EXPECT_EQ(p.rejected, 0u);
  EXPECT_TRUE(p.complete);
  for (std::size_t a = 0; a < 8; ++a) EXPECT_EQ(p.competitor_seeds[a], competitor_seed(99, a));
}

TEST(LevelSet, ToleranceOneAdmitsEverything) {
  const auto ls = build_level_set(testing::nations(), testing::small_config(Method::kDistMult, 3), 1.0, 3, 3,
                                  nations_options());
  EXPECT_EQ(ls.competitors.size(), 3u);
  EXPECT_EQ(ls.rejected, 0u);
}

TEST(LevelSet, BaselineSeedIsAlwaysAdmittedAtZero) {
  const auto c = testing::small_config(Method::kDistMult, 3);
  const std::uint64_t seeds[] = {c.seed};
  const auto ls = build_level_set_from_seeds(testing::nations(), c, 0.0, seeds, 1, nations_options());
  ASSERT_EQ(ls.competitors.size(), 1u);
  EXPECT_EQ(serialize_checkpoint(*ls.competitors[0]), serialize_checkpoint(*ls.baseline));
  const auto qs = queries_from_split(testing::nations(), Split::kTest);
  EXPECT_EQ(ambiguity(ls, testing::nations(), qs, 3), 0.0);
}

TEST(LevelSet, AdmissionFollowsSeedOrderRegardlessOfThreads) {
  const auto& pool = nations_pool();
  // Pick ε so that some, but not all, pool members qualify.
  std::vector<double> gaps;
  for (std::size_t i = 0; i < pool.competitors.size(); ++i)
    gaps.push_back(pool.baseline_reference_hits() - pool.competitor_reference_hits(i));
  std::sort(gaps.begin(), gaps.end());
  const double eps = std::max(0.0, gaps[gaps.size() / 2]);
  const auto cfg = testing::small_config(Method::kDistMult, 8);
  const auto one = build_level_set(testing::nations(), cfg, eps, 3, 8, nations_options(1));
  const auto four = build_level_set(testing::nations(), cfg, eps, 3, 8, nations_options(4));
  EXPECT_EQ(one.competitor_seeds, four.competitor_seeds);
  EXPECT_EQ(one.attempts, four.attempts);
  EXPECT_EQ(one.rejected, four.rejected);
  const auto sub = threshold_pool(pool, eps);
  const std::size_t take = std::min<std::size_t>(3, sub.competitor_seeds.size());
  EXPECT_EQ(one.competitor_seeds, std::vector<std::uint64_t>(sub.competitor_seeds.begin(),
                                                             sub.competitor_seeds.begin() + take));
}

TEST(LevelSet, RunsOutOfAttemptsAsIncomplete) {
  const auto ls = build_level_set(testing::nations(), testing::small_config(Method::kDistMult, 2), 0.5, 5, 2,
                                  nations_options());
  EXPECT_FALSE(ls.complete);
  EXPECT_EQ(ls.attempts, 2u);
}

TEST(LevelSet, ThresholdsAreNestedAndMetricsMonotone) {
  const auto& pool = nations_pool();
  const auto qs = queries_from_split(testing::nations(), Split::kTest);
  double prev_a = 0.0, prev_d = 0.0;
  std::vector<std::uint64_t> prev;
  for (double eps : {0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 1.0}) {
    const auto ls = threshold_pool(pool, eps);
    for (auto s : prev)
      EXPECT_NE(std::find(ls.competitor_seeds.begin(), ls.competitor_seeds.end(), s), ls.competitor_seeds.end());
    EXPECT_EQ(ls.competitors.size() + ls.rejected, pool.competitors.size());
    if (!ls.competitors.empty()) {
      const double a = ambiguity(ls, testing::nations(), qs, 3);
      const double d = discrepancy(ls, testing::nations(), qs, 3);
      EXPECT_GE(a, prev_a);
      EXPECT_GE(d, prev_d);
      prev_a = a;
      prev_d = d;
    }
    prev = ls.competitor_seeds;
  }
  EXPECT_EQ(prev.size(), pool.competitors.size());
}

TEST(Conflict, SingleQueryMatchesMatrixCell) {
  const auto& pool = nations_pool();
  const auto& g = testing::nations();
  const auto qs = queries_from_split(g, Split::kTest);
  const auto m = level_set_conflicts(pool, g, qs, 3);
  for (std::size_t q = 0; q < qs.size(); q += 17)
    for (std::size_t c = 0; c < pool.competitors.size(); ++c)
      EXPECT_EQ(conflict(*pool.baseline, *pool.competitors[c], g, qs[q], 3), m.at(c, q) == 1);
}

TEST(Report, NoRuleMatchesDirectComputation) {
  const auto& pool = nations_pool();
  const auto& g = testing::nations();
  const auto qs = queries_from_split(g, Split::kTest);
  const auto rep = evaluate_with_aggregation(pool, std::nullopt, 1, nullptr, g, qs, 3);
  EXPECT_EQ(rep.rule, "none");
  EXPECT_EQ(*rep.ambiguity, ambiguity(pool, g, qs, 3));
  EXPECT_EQ(*rep.discrepancy, discrepancy(pool, g, qs, 3));
  EXPECT_DOUBLE_EQ(rep.baseline_hits, hits_at_k(*pool.baseline, g, qs, 3).hits_at_k);
  EXPECT_LE(*rep.discrepancy, rep.bound.raw + 1e-12);
  EXPECT_GE(rep.epsilon_effective, rep.epsilon_realized);
  EXPECT_GE(rep.epsilon_effective, rep.epsilon);
}

TEST(Report, SingleVoterAggregationEqualsNoAggregation) {
  const auto& pool = nations_pool();
  const auto& g = testing::nations();
  const auto qs = queries_from_split(g, Split::kTest);
  const auto none = evaluate_with_aggregation(pool, std::nullopt, 1, nullptr, g, qs, 3);
  // Majority is left out: with one voter every non-top candidate ties.
  for (auto rule : {VotingRule::kBorda, VotingRule::kRange}) {
    const auto agg = evaluate_with_aggregation(pool, rule, 1, nullptr, g, qs, 3);
    EXPECT_EQ(agg.conflicts.cells, none.conflicts.cells);
    EXPECT_EQ(agg.baseline_top_k, none.baseline_top_k);
    EXPECT_EQ(agg.ambiguity, none.ambiguity);
  }
}

TEST(Report, EmptyLevelSetGivesNullMetrics) {
  LevelSet ls = nations_pool();
  ls.competitors.clear();
  ls.competitor_reference_hit_counts.clear();
  ls.competitor_seeds.clear();
  const auto qs = queries_from_split(testing::nations(), Split::kTest);
  const auto rep = evaluate_with_aggregation(ls, std::nullopt, 1, nullptr, testing::nations(), qs, 3);
  EXPECT_FALSE(rep.ambiguity.has_value());
  EXPECT_FALSE(rep.discrepancy.has_value());
  EXPECT_FALSE(rep.mean_hits.has_value());
  const auto j = report_to_json(rep);
  EXPECT_TRUE(j["ambiguity"].is_null());
  EXPECT_TRUE(j["discrepancy"].is_null());
}

TEST(Report, ShallowPoolIsAContractError) {
  const auto& pool = nations_pool();
  const auto qs = queries_from_split(testing::nations(), Split::kTest);
  EXPECT_THROW(evaluate_with_aggregation(pool, VotingRule::kBorda, 3, nullptr, testing::nations(), qs, 3),
               ContractError);
  EXPECT_THROW(evaluate_with_aggregation(pool, VotingRule::kBorda, 0, nullptr, testing::nations(), qs, 3),
               ConfigError);
}

TEST(AggregationPool, VoterZeroIsTheMemberAndSeedsAreDerived) {
  const auto ls = threshold_pool(nations_pool(), 1.0);
  LevelSet small = ls;
  small.competitors.resize(2);
  small.competitor_reference_hit_counts.resize(2);
  small.competitor_seeds.resize(2);
  const auto pool = train_aggregation_pool(testing::nations(), small, 3, 99, 4);
  EXPECT_EQ(pool.depth(), 3u);
  EXPECT_EQ(pool.baseline_voters[0], small.baseline);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(pool.member_voters[c][0], small.competitors[c]);
    for (std::size_t i = 1; i < 3; ++i)
      EXPECT_EQ(pool.member_voters[c][i]->config.seed, aggregation_seed(99, small.competitor_seeds[c], i));
  }
  const auto qs = queries_from_split(testing::nations(), Split::kTest);
  const auto rep = evaluate_with_aggregation(small, VotingRule::kRange, 3, &pool, testing::nations(), qs, 3);
  EXPECT_EQ(rep.n_aggregate, 3u);
  EXPECT_EQ(rep.rule, "range");
  EXPECT_LE(*rep.discrepancy, rep.bound.raw + 1e-12);
}

TEST(Report, CsvWriters) {
  const Flags base{1, 0};
  MultiplicityReport r;
  r.conflicts = conflict_matrix(base, std::vector<Flags>{{0, 0}});
  r.baseline_top_k = base;
  r.max_conflict = max_conflict_flags(r.conflicts);
  std::ostringstream out;
  write_conflicts_csv(out, r);
  EXPECT_EQ(out.str(), "competitor,query_id,conflict\n0,0,1\n0,1,0\n");
}

}  // namespace
}  // namespace kgpm
