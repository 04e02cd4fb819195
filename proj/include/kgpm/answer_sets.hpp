#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/multiplicity.hpp"
#include "kgpm/parallel.hpp"
#include "kgpm/ranking.hpp"

namespace kgpm {

/// Entities whose score reaches the threshold: {e : score(q, e) ≥ τ}, taken
/// over unmasked candidates. Members are sorted ascending.
struct AnswerSet {
  Query query;
  double tau = 0.0;
  std::vector<EntityId> members;

  bool operator==(const AnswerSet& o) const { return members == o.members; }
};

inline AnswerSet answer_set_from_scores(const Query& q, std::span<const double> scores, double tau,
                                        std::span<const char> masked = {}) {
  AnswerSet a{q, tau, {}};
  for (EntityId e = 0; e < scores.size(); ++e) {
    if (!masked.empty() && masked[e]) continue;
    if (scores[e] >= tau) a.members.push_back(e);
  }
  return a;
}

// `filter` masks known-true answers other than the gold one, as in ranking.
inline AnswerSet answer_set(const EmbeddingModel& m, const Query& q, double tau, const KnowledgeGraph* filter = nullptr) {
  const auto scores = score_all_candidates(m, q);
  const auto mask = filter ? filter_mask(*filter, q) : std::vector<char>{};
  return answer_set_from_scores(q, scores, tau, mask);
}

// |A ∩ B| / |A ∪ B| on sorted member lists; two empty sets count as identical.
inline double jaccard(std::span<const EntityId> a, std::span<const EntityId> b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

/// Answer sets of the baseline and every competitor for each query.
struct AnswerSetTable {
  double tau = 0.0;
  std::vector<std::vector<AnswerSet>> sets;  // [model][query], model 0 is the baseline

  std::size_t competitors() const { return sets.empty() ? 0 : sets.size() - 1; }
  std::size_t queries() const { return sets.empty() ? 0 : sets[0].size(); }
};

inline AnswerSetTable answer_set_table(const LevelSet& ls, std::span<const Query> queries, double tau,
                                       const KnowledgeGraph* filter = nullptr, std::size_t threads = 1) {
  std::vector<ModelPtr> models{ls.baseline};
  models.insert(models.end(), ls.competitors.begin(), ls.competitors.end());
  AnswerSetTable t;
  t.tau = tau;
  t.sets.assign(models.size(), std::vector<AnswerSet>(queries.size()));
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    for (std::size_t m = 0; m < models.size(); ++m) t.sets[m][q] = answer_set(*models[m], queries[q], tau, filter);
  });
  return t;
}

// Conflict matrix with the indicator 1[A_τ(M) ≠ A_τ(M*)].
inline ConflictMatrix set_conflicts(const AnswerSetTable& t) {
  ConflictMatrix m;
  m.competitors = t.competitors();
  m.queries = t.queries();
  for (std::size_t c = 1; c < t.sets.size(); ++c)
    for (std::size_t q = 0; q < m.queries; ++q) m.cells.push_back(t.sets[c][q].members != t.sets[0][q].members);
  return m;
}

inline double set_ambiguity(const AnswerSetTable& t) { return ambiguity(set_conflicts(t)); }
inline double set_discrepancy(const AnswerSetTable& t) { return discrepancy(set_conflicts(t)); }

/// Mean Jaccard similarity over (query, competitor) pairs against the baseline.
inline double agreement(const AnswerSetTable& t) {
  if (t.competitors() == 0) throw ContractError("agreement needs a nonempty level set");
  if (t.queries() == 0) throw ConfigError("agreement needs at least one query");
  double sum = 0.0;
  for (std::size_t c = 1; c < t.sets.size(); ++c)
    for (std::size_t q = 0; q < t.queries(); ++q) sum += jaccard(t.sets[c][q].members, t.sets[0][q].members);
  return sum / static_cast<double>(t.competitors() * t.queries());
}

inline double set_ambiguity(const LevelSet& ls, std::span<const Query> queries, double tau,
                            const KnowledgeGraph* filter = nullptr) {
  return set_ambiguity(answer_set_table(ls, queries, tau, filter));
}

inline double set_discrepancy(const LevelSet& ls, std::span<const Query> queries, double tau,
                              const KnowledgeGraph* filter = nullptr) {
  return set_discrepancy(answer_set_table(ls, queries, tau, filter));
}

inline double agreement(const LevelSet& ls, std::span<const Query> queries, double tau,
                        const KnowledgeGraph* filter = nullptr) {
  return agreement(answer_set_table(ls, queries, tau, filter));
}

/// Type-7 (linear interpolation) quantile of sorted-on-demand values.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// τ as the p-quantile of the model's scores for gold answers of `queries`.
inline double tau_from_gold_quantile(const EmbeddingModel& m, std::span<const Query> queries, double p) {
  std::vector<double> gold;
  gold.reserve(queries.size());
  for (const auto& q : queries) gold.push_back(score(m, q.gold_triple()));
  return quantile(std::move(gold), p);
}

// JSON lines `{query_id, model_id, tau, members}`; model 0 is the baseline.
inline void write_answer_sets_jsonl(std::ostream& out, const AnswerSetTable& t) {
  for (std::size_t m = 0; m < t.sets.size(); ++m) {
    for (std::size_t q = 0; q < t.sets[m].size(); ++q) {
      nlohmann::ordered_json j;
      j["query_id"] = q;
      j["model_id"] = m;
      j["tau"] = t.tau;
      j["members"] = t.sets[m][q].members;
      out << j.dump() << '\n';
    }
  }
}

}  // namespace kgpm
