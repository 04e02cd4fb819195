#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/parallel.hpp"

namespace kgpm {

// How a gold answer tied with other candidates is ranked for Hits@K.
// Optimistic counts strictly better candidates only.
enum class TieMode { kOptimistic, kPessimistic, kMean };

inline std::string_view to_string(TieMode t) {
  switch (t) {
    case TieMode::kOptimistic: return "optimistic";
    case TieMode::kPessimistic: return "pessimistic";
    case TieMode::kMean: return "mean";
  }
  return "?";
}

inline TieMode parse_tie_mode(std::string_view s) {
  if (s == "optimistic") return TieMode::kOptimistic;
  if (s == "pessimistic") return TieMode::kPessimistic;
  if (s == "mean") return TieMode::kMean;
  throw ConfigError("unknown tie mode '" + std::string(s) + "'");
}

struct EvalOptions {
  bool filtered = true;
  TieMode tie_mode = TieMode::kOptimistic;
  std::size_t threads = 1;
};

// 1 for every known-true answer of the query other than its gold answer.
inline std::vector<char> filter_mask(const KnowledgeGraph& g, const Query& q) {
  std::vector<char> mask(g.num_entities(), 0);
  for (EntityId e : g.known_answers(q)) mask[e] = 1;
  mask[q.gold] = 0;
  return mask;
}

/// One model's scored candidate ordering for a query.
struct QueryRanking {
  Query query;
  std::vector<double> scores;
  std::vector<char> masked;     // excluded candidates (filtered setting)
  std::vector<EntityId> order;  // unmasked candidates, descending score, then ascending id

  std::size_t num_candidates() const { return order.size(); }
  bool is_masked(EntityId e) const { return !masked.empty() && masked[e] != 0; }
};

inline QueryRanking make_ranking(const Query& q, std::vector<double> scores, std::vector<char> masked = {}) {
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("non-finite candidate score");
  if (!masked.empty() && masked.size() != scores.size()) throw ContractError("mask size differs from score vector");
  if (q.gold < scores.size() && !masked.empty() && masked[q.gold]) throw ContractError("gold answer is masked");
  QueryRanking r{q, std::move(scores), std::move(masked), {}};
  r.order.reserve(r.scores.size());
  for (EntityId e = 0; e < r.scores.size(); ++e)
    if (!r.is_masked(e)) r.order.push_back(e);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](EntityId a, EntityId b) { return r.scores[a] > r.scores[b]; });
  return r;
}

inline QueryRanking rank_candidates(const EmbeddingModel& m, const Query& q, const KnowledgeGraph* filter) {
  return make_ranking(q, score_all_candidates(m, q), filter ? filter_mask(*filter, q) : std::vector<char>{});
}

struct TieCounts {
  std::size_t better = 0;  // unmasked others scoring strictly higher
  std::size_t tied = 0;    // unmasked others scoring exactly equal
};

inline TieCounts tie_counts(std::span<const double> scores, std::span<const char> masked, EntityId entity) {
  TieCounts c;
  const double s = scores[entity];
  for (EntityId d = 0; d < scores.size(); ++d) {
    if (d == entity || (!masked.empty() && masked[d])) continue;
    if (scores[d] > s) ++c.better;
    else if (scores[d] == s) ++c.tied;
  }
  return c;
}

// Rank under the given tie mode; kMean may return a half-integer.
inline double tie_rank(const TieCounts& c, TieMode mode) {
  switch (mode) {
    case TieMode::kOptimistic: return 1.0 + static_cast<double>(c.better);
    case TieMode::kPessimistic: return 1.0 + static_cast<double>(c.better + c.tied);
    case TieMode::kMean: return 1.0 + static_cast<double>(c.better) + 0.5 * static_cast<double>(c.tied);
  }
  return 0.0;
}

/// 1 + |{unmasked d ≠ e : score(d) > score(e)}|.
inline std::size_t rank_of(const QueryRanking& r, EntityId entity) {
  if (entity >= r.scores.size()) throw BoundsError("entity id out of range");
  if (r.is_masked(entity)) throw ContractError("cannot rank a masked candidate");
  return 1 + tie_counts(r.scores, r.masked, entity).better;
}

inline bool top_k(const QueryRanking& r, EntityId entity, int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  return rank_of(r, entity) <= static_cast<std::size_t>(k);
}

/// Per-query gold ranks plus the Hits@K summary of one model.
struct EvalResult {
  int k = 10;
  TieMode tie_mode = TieMode::kOptimistic;
  std::vector<std::size_t> ranks;  // optimistic rank of the gold answer
  std::vector<char> in_top_k;      // indicator under tie_mode
  double hits_at_k = 0.0;
  double hits_tail = 0.0;  // over tail queries only (NaN if none)
  double hits_head = 0.0;
  std::size_t hit_count = 0;
  std::size_t tied_queries = 0;  // gold tied with at least one other candidate
};

inline EvalResult summarize(std::span<const Query> queries, std::span<const TieCounts> counts, int k, TieMode mode) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (queries.empty()) throw ConfigError("cannot evaluate an empty query set");
  EvalResult r;
  r.k = k;
  r.tie_mode = mode;
  std::size_t tail_n = 0, tail_hits = 0, head_n = 0, head_hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    r.ranks.push_back(1 + counts[i].better);
    const bool hit = tie_rank(counts[i], mode) <= static_cast<double>(k);
    r.in_top_k.push_back(hit ? 1 : 0);
    r.hit_count += hit;
    r.tied_queries += counts[i].tied > 0;
    if (queries[i].direction == Direction::kTail) {
      ++tail_n;
      tail_hits += hit;
    } else {
      ++head_n;
      head_hits += hit;
    }
  }
  r.hits_at_k = static_cast<double>(r.hit_count) / static_cast<double>(queries.size());
  r.hits_tail = tail_n ? static_cast<double>(tail_hits) / static_cast<double>(tail_n) : std::nan("");
  r.hits_head = head_n ? static_cast<double>(head_hits) / static_cast<double>(head_n) : std::nan("");
  return r;
}

inline std::vector<TieCounts> gold_tie_counts(const EmbeddingModel& m, const KnowledgeGraph& g,
                                              std::span<const Query> queries, const EvalOptions& opt) {
  check_compatible(m, g);
  std::vector<TieCounts> counts(queries.size());
  parallel_for(queries.size(), opt.threads, [&](std::size_t i) {
    const auto& q = queries[i];
    const auto scores = score_all_candidates(m, q);
    for (double s : scores)
      if (!std::isfinite(s)) throw DataError("non-finite candidate score");
    const auto mask = opt.filtered ? filter_mask(g, q) : std::vector<char>{};
    counts[i] = tie_counts(scores, mask, q.gold);
  });
  return counts;
}

/// Hits@K = mean over queries of 1[rank(gold) ≤ K]. Filtered evaluation masks
/// known-true answers other than the gold one before ranking.
inline EvalResult hits_at_k(const EmbeddingModel& m, const KnowledgeGraph& g, std::span<const Query> queries, int k,
                            const EvalOptions& opt = {}) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (queries.empty()) throw ConfigError("cannot evaluate an empty query set");
  const auto counts = gold_tie_counts(m, g, queries, opt);
  return summarize(queries, counts, k, opt.tie_mode);
}

// CSV `query_id,direction,gold,rank,topK_flag`.
inline void write_rank_csv(std::ostream& out, std::span<const Query> queries, const EvalResult& r) {
  out << "query_id,direction,gold,rank,topK_flag\n";
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out << i << ',' << to_string(queries[i].direction) << ',' << queries[i].gold << ',' << r.ranks[i] << ','
        << static_cast<int>(r.in_top_k[i]) << '\n';
  }
}

}  // namespace kgpm
