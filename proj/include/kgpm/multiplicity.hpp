#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgpm/checkpoint.hpp"
#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/parallel.hpp"
#include "kgpm/ranking.hpp"
#include "kgpm/rng.hpp"
#include "kgpm/trainer.hpp"
#include "kgpm/voting.hpp"

namespace kgpm {

using ModelPtr = std::shared_ptr<const EmbeddingModel>;

/// Δ(M, τ) for every (competitor, query) pair: 1 iff the competitor's top-K
/// verdict on the gold answer differs from the baseline's.
struct ConflictMatrix {
  std::size_t competitors = 0;
  std::size_t queries = 0;
  std::vector<std::uint8_t> cells;  // row-major, competitor × query

  std::uint8_t at(std::size_t c, std::size_t q) const { return cells[c * queries + q]; }

  std::size_t row_sum(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t q = 0; q < queries; ++q) s += at(c, q);
    return s;
  }
};

inline ConflictMatrix conflict_matrix(std::span<const char> baseline_top_k,
                                      std::span<const std::vector<char>> competitor_top_k) {
  ConflictMatrix m;
  m.competitors = competitor_top_k.size();
  m.queries = baseline_top_k.size();
  m.cells.reserve(m.competitors * m.queries);
  for (const auto& flags : competitor_top_k) {
    if (flags.size() != m.queries) throw ContractError("top-K flag vectors differ in length");
    for (std::size_t q = 0; q < m.queries; ++q) m.cells.push_back((flags[q] != 0) != (baseline_top_k[q] != 0));
  }
  return m;
}

// 1 for every query conflicted by at least one competitor.
inline std::vector<char> max_conflict_flags(const ConflictMatrix& m) {
  std::vector<char> out(m.queries, 0);
  for (std::size_t c = 0; c < m.competitors; ++c)
    for (std::size_t q = 0; q < m.queries; ++q) out[q] |= static_cast<char>(m.at(c, q));
  return out;
}

/// Empirical ambiguity: share of queries on which some competitor disagrees
/// with the baseline's top-K verdict.
inline double ambiguity(const ConflictMatrix& m) {
  if (m.queries == 0) throw ConfigError("ambiguity needs at least one query");
  if (m.competitors == 0) throw ContractError("ambiguity needs a nonempty level set");
  const auto flags = max_conflict_flags(m);
  return static_cast<double>(std::count(flags.begin(), flags.end(), 1)) / static_cast<double>(m.queries);
}

/// Empirical discrepancy: the largest per-competitor conflict rate.
inline double discrepancy(const ConflictMatrix& m) {
  if (m.queries == 0) throw ConfigError("discrepancy needs at least one query");
  if (m.competitors == 0) throw ContractError("discrepancy needs a nonempty level set");
  std::size_t worst = 0;
  for (std::size_t c = 0; c < m.competitors; ++c) worst = std::max(worst, m.row_sum(c));
  return static_cast<double>(worst) / static_cast<double>(m.queries);
}

struct BoundValue {
  double raw = 0.0;      // 2(1 - H) + ε
  double clamped = 0.0;  // raw clamped into [0, 1]
};

/// Upper bound on discrepancy: δ ≤ 2 (1 - H_K(M*)) + ε.
inline BoundValue discrepancy_bound(double baseline_hits, double epsilon) {
  if (!(baseline_hits >= 0.0 && baseline_hits <= 1.0)) throw ContractError("baseline Hits@K must lie in [0, 1]");
  if (!(epsilon >= 0.0)) throw ContractError("epsilon must be >= 0");
  const double raw = 2.0 * (1.0 - baseline_hits) + epsilon;
  return {raw, std::clamp(raw, 0.0, 1.0)};
}

/// 1 iff baseline and competitor disagree on whether the query's gold answer
/// is in the top K.
inline bool conflict(const EmbeddingModel& baseline, const EmbeddingModel& competitor, const KnowledgeGraph& g,
                     const Query& q, int k, const EvalOptions& opt = {}) {
  check_compatible(baseline, competitor);
  const Query one[] = {q};
  const auto a = hits_at_k(baseline, g, one, k, opt);
  const auto b = hits_at_k(competitor, g, one, k, opt);
  return a.in_top_k[0] != b.in_top_k[0];
}

// D ≤ ε evaluated on integer hit counts so that ε = 0 admits exact ties.
inline bool within_tolerance(std::size_t baseline_hits, std::size_t competitor_hits, std::size_t n, double epsilon) {
  const double diff = static_cast<double>(baseline_hits) - static_cast<double>(competitor_hits);
  return diff <= epsilon * static_cast<double>(n) + 1e-9;
}

inline std::uint64_t competitor_seed(std::uint64_t master_seed, std::uint64_t attempt) {
  return derive_seed(master_seed, "competitor", attempt);
}

// Seed of the i-th extra voter trained for the member whose own seed is `member_seed`.
inline std::uint64_t aggregation_seed(std::uint64_t master_seed, std::uint64_t member_seed, std::uint64_t i) {
  return derive_seed(master_seed, "aggregate", member_seed, i);
}

/// Baseline plus the retrained competitors admitted at tolerance ε.
struct LevelSet {
  ModelPtr baseline;
  std::vector<ModelPtr> competitors;
  double epsilon = 0.0;
  Split reference_split = Split::kValid;
  int k = 10;
  std::size_t reference_queries = 0;
  std::size_t baseline_reference_hit_count = 0;
  std::vector<std::size_t> competitor_reference_hit_counts;
  std::vector<std::uint64_t> competitor_seeds;
  std::size_t attempts = 0;
  std::size_t rejected = 0;
  bool complete = true;  // false when max_attempts ran out below the target size

  double baseline_reference_hits() const {
    return static_cast<double>(baseline_reference_hit_count) / static_cast<double>(reference_queries);
  }
  double competitor_reference_hits(std::size_t i) const {
    return static_cast<double>(competitor_reference_hit_counts[i]) / static_cast<double>(reference_queries);
  }
};

struct LevelSetOptions {
  int k = 10;
  Split reference_split = Split::kValid;
  std::uint64_t master_seed = 0;
  EvalOptions eval;
  std::size_t threads = 1;
};

/// Trains the baseline from `config` (its own seed) and then one candidate
/// per entry of `seeds`, in order, admitting those within ε on the reference
/// split until `target_size` are admitted. Candidates are trained in
/// parallel batches but admitted strictly in seed order.
inline LevelSet build_level_set_from_seeds(const KnowledgeGraph& graph, const ModelConfig& config, double epsilon,
                                           std::span<const std::uint64_t> seeds, std::size_t target_size,
                                           const LevelSetOptions& opt = {}) {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  LevelSet ls;
  ls.epsilon = epsilon;
  ls.reference_split = opt.reference_split;
  ls.k = opt.k;
  const auto ref_queries = queries_from_split(graph, opt.reference_split);
  if (ref_queries.empty()) throw DatasetError("reference split has no triples");
  ls.reference_queries = ref_queries.size();
  EvalOptions eval = opt.eval;
  eval.threads = 1;

  ls.baseline = std::make_shared<const EmbeddingModel>(train(graph, config));
  ls.baseline_reference_hit_count = hits_at_k(*ls.baseline, graph, ref_queries, opt.k, eval).hit_count;

  const std::size_t batch = std::max<std::size_t>(1, opt.threads);
  for (std::size_t start = 0; start < seeds.size() && ls.competitors.size() < target_size; start += batch) {
    const std::size_t n = std::min(batch, seeds.size() - start);
    std::vector<ModelPtr> trained(n);
    std::vector<std::size_t> hit_counts(n);
    parallel_for(n, opt.threads, [&](std::size_t i) {
      ModelConfig c = config;
      c.seed = seeds[start + i];
      auto m = std::make_shared<const EmbeddingModel>(train(graph, c));
      hit_counts[i] = hits_at_k(*m, graph, ref_queries, opt.k, eval).hit_count;
      trained[i] = std::move(m);
    });
    for (std::size_t i = 0; i < n && ls.competitors.size() < target_size; ++i) {
      ++ls.attempts;
      if (within_tolerance(ls.baseline_reference_hit_count, hit_counts[i], ls.reference_queries, epsilon)) {
        ls.competitors.push_back(trained[i]);
        ls.competitor_reference_hit_counts.push_back(hit_counts[i]);
        ls.competitor_seeds.push_back(seeds[start + i]);
      } else {
        ++ls.rejected;
      }
    }
  }
  ls.complete = ls.competitors.size() >= target_size;
  return ls;
}

/// Retrains `config` with seeds derived from the master seed until
/// `target_size` competitors are admitted or `max_attempts` are spent. A
/// short level set is returned with `complete == false`.
inline LevelSet build_level_set(const KnowledgeGraph& graph, const ModelConfig& config, double epsilon,
                                std::size_t target_size, std::size_t max_attempts, const LevelSetOptions& opt = {}) {
  std::vector<std::uint64_t> seeds(max_attempts);
  for (std::size_t a = 0; a < max_attempts; ++a) seeds[a] = competitor_seed(opt.master_seed, a);
  return build_level_set_from_seeds(graph, config, epsilon, seeds, target_size, opt);
}

// Every candidate of a fixed pool, unthresholded (ε = +inf).
inline LevelSet train_candidate_pool(const KnowledgeGraph& graph, const ModelConfig& config, std::size_t pool_size,
                                     const LevelSetOptions& opt = {}) {
  auto ls = build_level_set(graph, config, std::numeric_limits<double>::infinity(), pool_size, pool_size, opt);
  return ls;
}

// Sub-level-set of `pool` admitted at ε. Nested in ε by construction.
inline LevelSet threshold_pool(const LevelSet& pool, double epsilon) {
  LevelSet ls = pool;
  ls.epsilon = epsilon;
  ls.competitors.clear();
  ls.competitor_reference_hit_counts.clear();
  ls.competitor_seeds.clear();
  ls.rejected = 0;
  for (std::size_t i = 0; i < pool.competitors.size(); ++i) {
    if (within_tolerance(pool.baseline_reference_hit_count, pool.competitor_reference_hit_counts[i],
                         pool.reference_queries, epsilon)) {
      ls.competitors.push_back(pool.competitors[i]);
      ls.competitor_reference_hit_counts.push_back(pool.competitor_reference_hit_counts[i]);
      ls.competitor_seeds.push_back(pool.competitor_seeds[i]);
    } else {
      ++ls.rejected;
    }
  }
  return ls;
}

/// Extra voters per level-set member. Voter 0 of every list is the member
/// itself, so aggregating one voter reproduces the member.
struct AggregationPool {
  std::vector<ModelPtr> baseline_voters;
  std::vector<std::vector<ModelPtr>> member_voters;  // aligned with competitors

  std::size_t depth() const {
    std::size_t d = baseline_voters.size();
    for (const auto& v : member_voters) d = std::min(d, v.size());
    return d;
  }
};

inline AggregationPool train_aggregation_pool(const KnowledgeGraph& graph, const LevelSet& ls, std::size_t n_aggregate,
                                              std::uint64_t master_seed, std::size_t threads = 1) {
  if (n_aggregate < 1) throw ConfigError("n_aggregate must be >= 1");
  AggregationPool pool;
  const std::size_t members = ls.competitors.size() + 1;  // member 0 is the baseline
  auto member_model = [&](std::size_t j) { return j == 0 ? ls.baseline : ls.competitors[j - 1]; };
  std::vector<std::vector<ModelPtr>> voters(members);
  for (std::size_t j = 0; j < members; ++j) {
    voters[j].resize(n_aggregate);
    voters[j][0] = member_model(j);
  }
  const std::size_t extra = n_aggregate - 1;
  parallel_for(members * extra, threads, [&](std::size_t flat) {
    const std::size_t j = flat / extra;
    const std::size_t i = flat % extra + 1;
    ModelConfig c = member_model(j)->config;
    c.seed = aggregation_seed(master_seed, member_model(j)->config.seed, i);
    try {
      voters[j][i] = std::make_shared<const EmbeddingModel>(train(graph, c));
    } catch (const Error& e) {
      throw TrainingError(std::string(j == 0 ? "aggregation for baseline" : "aggregation for member " +
                                                                                 std::to_string(j - 1)) +
                          ", voter " + std::to_string(i) + ": " + e.what());
    }
  });
  pool.baseline_voters = std::move(voters[0]);
  for (std::size_t j = 1; j < members; ++j) pool.member_voters.push_back(std::move(voters[j]));
  return pool;
}

struct MultiplicityReport {
  std::string rule = "none";
  std::size_t n_aggregate = 1;
  int k = 10;
  double epsilon = 0.0;
  Split reference_split = Split::kValid;
  std::size_t n_queries = 0;
  std::size_t n_competitors = 0;
  std::size_t attempts = 0;
  std::size_t rejected = 0;
  bool level_set_complete = true;

  double baseline_hits = 0.0;              // H_K(M*) on the evaluated queries
  std::optional<double> mean_hits;         // mean H_K over the evaluation set S
  std::vector<double> competitor_hits;
  std::optional<double> ambiguity;
  std::optional<double> discrepancy;

  // Largest H_K(M*) - H_K(M) over S on the evaluated queries.
  double epsilon_realized = 0.0;
  // max(ε, epsilon_realized): the tolerance S actually satisfies on these queries.
  double epsilon_effective = 0.0;
  // Largest tolerance on the reference split after aggregation, and its excess over ε.
  double reference_epsilon_realized = 0.0;
  double epsilon_deviation = 0.0;
  BoundValue bound;          // uses epsilon_effective
  BoundValue bound_nominal;  // uses ε as configured

  ConflictMatrix conflicts;
  std::vector<char> baseline_top_k;
  std::vector<char> max_conflict;
  std::vector<std::uint64_t> competitor_seeds;
  std::string comparison_pool = "each competitor against the baseline";
};

namespace detail {

inline std::vector<char> top_k_flags(std::span<const std::size_t> ranks, int k) {
  std::vector<char> out(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) out[i] = ranks[i] <= static_cast<std::size_t>(k);
  return out;
}

inline double hit_rate(std::span<const char> flags) {
  return static_cast<double>(std::count(flags.begin(), flags.end(), 1)) / static_cast<double>(flags.size());
}

}  // namespace detail

/// Multiplicity metrics over an evaluation set S. Without a voting rule, S is
/// the level set. With one, every member (and the baseline) is replaced by
/// the aggregate of its first `n_aggregate` voters from `pool`, and conflicts
/// are measured against the aggregated baseline.
inline MultiplicityReport evaluate_with_aggregation(const LevelSet& ls, std::optional<VotingRule> rule,
                                                    std::size_t n_aggregate, const AggregationPool* pool,
                                                    const KnowledgeGraph& graph, std::span<const Query> queries,
                                                    int k, const EvalOptions& opt = {}) {
  if (n_aggregate < 1) throw ConfigError("n_aggregate must be >= 1");
  if (queries.empty()) throw ConfigError("cannot evaluate an empty query set");
  if (k < 1) throw ConfigError("K must be >= 1");
  if (rule && n_aggregate > 1 && (!pool || pool->depth() < n_aggregate || pool->member_voters.size() != ls.competitors.size())) {
    throw ContractError("aggregation pool is missing or too shallow for n_aggregate = " + std::to_string(n_aggregate));
  }
  MultiplicityReport rep;
  rep.rule = rule ? std::string(to_string(*rule)) : "none";
  rep.n_aggregate = rule ? n_aggregate : 1;
  rep.k = k;
  rep.epsilon = ls.epsilon;
  rep.reference_split = ls.reference_split;
  rep.n_queries = queries.size();
  rep.n_competitors = ls.competitors.size();
  rep.attempts = ls.attempts;
  rep.rejected = ls.rejected;
  rep.level_set_complete = ls.complete;
  rep.competitor_seeds = ls.competitor_seeds;

  const auto ref_queries = queries_from_split(graph, ls.reference_split);
  std::vector<char> base_flags, base_ref_flags;
  std::vector<std::vector<char>> comp_flags(ls.competitors.size()), comp_ref_flags(ls.competitors.size());

  if (!rule) {
    base_flags = hits_at_k(*ls.baseline, graph, queries, k, opt).in_top_k;
    for (std::size_t c = 0; c < ls.competitors.size(); ++c)
      comp_flags[c] = hits_at_k(*ls.competitors[c], graph, queries, k, opt).in_top_k;
  } else {
    auto voters_of = [&](const std::vector<ModelPtr>* list, const ModelPtr& self) {
      if (n_aggregate == 1) return std::vector<ModelPtr>{self};
      return std::vector<ModelPtr>(list->begin(), list->begin() + static_cast<std::ptrdiff_t>(n_aggregate));
    };
    auto flags_of = [&](const AggregatedModel& m, std::span<const Query> qs) {
      return detail::top_k_flags(gold_ranks(m, graph, qs, opt), k);
    };
    const auto base_agg = aggregate_models(voters_of(pool ? &pool->baseline_voters : nullptr, ls.baseline), *rule);
    base_flags = flags_of(base_agg, queries);
    base_ref_flags = flags_of(base_agg, ref_queries);
    for (std::size_t c = 0; c < ls.competitors.size(); ++c) {
      const auto agg = aggregate_models(voters_of(pool ? &pool->member_voters[c] : nullptr, ls.competitors[c]), *rule);
      comp_flags[c] = flags_of(agg, queries);
      comp_ref_flags[c] = flags_of(agg, ref_queries);
    }
  }

  rep.baseline_top_k = base_flags;
  rep.baseline_hits = detail::hit_rate(base_flags);
  for (const auto& f : comp_flags) rep.competitor_hits.push_back(detail::hit_rate(f));

  double realized = 0.0, ref_realized = 0.0;
  for (std::size_t c = 0; c < ls.competitors.size(); ++c) {
    realized = std::max(realized, rep.baseline_hits - rep.competitor_hits[c]);
    if (rule) {
      ref_realized = std::max(ref_realized, detail::hit_rate(base_ref_flags) - detail::hit_rate(comp_ref_flags[c]));
    } else {
      ref_realized = std::max(ref_realized, ls.baseline_reference_hits() - ls.competitor_reference_hits(c));
    }
  }
  rep.epsilon_realized = realized;
  rep.epsilon_effective = std::max(ls.epsilon, realized);
  rep.reference_epsilon_realized = ref_realized;
  rep.epsilon_deviation = ls.competitors.empty() ? 0.0 : ref_realized - ls.epsilon;
  rep.bound = discrepancy_bound(rep.baseline_hits, rep.epsilon_effective);
  rep.bound_nominal = discrepancy_bound(rep.baseline_hits, ls.epsilon);

  rep.conflicts = conflict_matrix(base_flags, comp_flags);
  rep.max_conflict = max_conflict_flags(rep.conflicts);
  if (!ls.competitors.empty()) {
    double sum = 0.0;
    for (double h : rep.competitor_hits) sum += h;
    rep.mean_hits = sum / static_cast<double>(rep.competitor_hits.size());
    rep.ambiguity = ambiguity(rep.conflicts);
    rep.discrepancy = discrepancy(rep.conflicts);
  }
  return rep;
}

// Trains the aggregation pool on demand and evaluates.
inline MultiplicityReport evaluate_with_aggregation(const LevelSet& ls, std::optional<VotingRule> rule,
                                                    std::size_t n_aggregate, const KnowledgeGraph& graph,
                                                    std::span<const Query> queries, int k, std::uint64_t master_seed,
                                                    const EvalOptions& opt = {}, std::size_t threads = 1) {
  if (!rule || n_aggregate <= 1) return evaluate_with_aggregation(ls, rule, n_aggregate, nullptr, graph, queries, k, opt);
  const auto pool = train_aggregation_pool(graph, ls, n_aggregate, master_seed, threads);
  return evaluate_with_aggregation(ls, rule, n_aggregate, &pool, graph, queries, k, opt);
}

inline ConflictMatrix level_set_conflicts(const LevelSet& ls, const KnowledgeGraph& g, std::span<const Query> queries,
                                          int k, const EvalOptions& opt = {}) {
  const auto base = hits_at_k(*ls.baseline, g, queries, k, opt).in_top_k;
  std::vector<std::vector<char>> comps;
  for (const auto& c : ls.competitors) comps.push_back(hits_at_k(*c, g, queries, k, opt).in_top_k);
  return conflict_matrix(base, comps);
}

inline double ambiguity(const LevelSet& ls, const KnowledgeGraph& g, std::span<const Query> queries, int k,
                        const EvalOptions& opt = {}) {
  if (queries.empty()) throw ConfigError("ambiguity needs at least one query");
  return ambiguity(level_set_conflicts(ls, g, queries, k, opt));
}

inline double discrepancy(const LevelSet& ls, const KnowledgeGraph& g, std::span<const Query> queries, int k,
                          const EvalOptions& opt = {}) {
  if (queries.empty()) throw ConfigError("discrepancy needs at least one query");
  return discrepancy(level_set_conflicts(ls, g, queries, k, opt));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json report_to_json(const MultiplicityReport& r) {
  nlohmann::ordered_json j;
  j["rule"] = r.rule;
  j["n_aggregate"] = r.n_aggregate;
  j["k"] = r.k;
  j["epsilon"] = r.epsilon;
  j["reference_split"] = to_string(r.reference_split);
  j["comparison_pool"] = r.comparison_pool;
  j["n_queries"] = r.n_queries;
  j["n_competitors"] = r.n_competitors;
  j["attempts"] = r.attempts;
  j["rejected"] = r.rejected;
  j["level_set_complete"] = r.level_set_complete;
  j["baseline_hits"] = r.baseline_hits;
  j["mean_hits"] = optional_json(r.mean_hits);
  j["competitor_hits"] = r.competitor_hits;
  j["ambiguity"] = optional_json(r.ambiguity);
  j["discrepancy"] = optional_json(r.discrepancy);
  j["bound"] = r.n_competitors ? nlohmann::ordered_json(r.bound.clamped) : nlohmann::ordered_json(nullptr);
  j["bound_raw"] = r.bound.raw;
  j["bound_nominal"] = r.bound_nominal.clamped;
  j["bound_nominal_raw"] = r.bound_nominal.raw;
  j["epsilon_realized"] = r.epsilon_realized;
  j["epsilon_effective"] = r.epsilon_effective;
  j["reference_epsilon_realized"] = r.reference_epsilon_realized;
  j["epsilon_deviation"] = r.epsilon_deviation;
  j["competitor_seeds"] = r.competitor_seeds;
  return j;
}

// CSV `competitor,query_id,conflict`, one row per cell.
inline void write_conflicts_csv(std::ostream& out, const MultiplicityReport& r) {
  out << "competitor,query_id,conflict\n";
  for (std::size_t c = 0; c < r.conflicts.competitors; ++c)
    for (std::size_t q = 0; q < r.conflicts.queries; ++q)
      out << c << ',' << q << ',' << static_cast<int>(r.conflicts.at(c, q)) << '\n';
}

// CSV `query_id,direction,fixed,relation,gold,baseline_topK,max_conflict,n_conflicting`.
inline void write_query_flags_csv(std::ostream& out, const MultiplicityReport& r, std::span<const Query> queries) {
  out << "query_id,direction,fixed,relation,gold,baseline_topK,max_conflict,n_conflicting\n";
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::size_t n = 0;
    for (std::size_t c = 0; c < r.conflicts.competitors; ++c) n += r.conflicts.at(c, q);
    out << q << ',' << to_string(queries[q].direction) << ',' << queries[q].fixed << ',' << queries[q].relation << ','
        << queries[q].gold << ',' << static_cast<int>(r.baseline_top_k[q]) << ','
        << static_cast<int>(r.max_conflict[q]) << ',' << n << '\n';
  }
}

}  // namespace kgpm
