#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/parallel.hpp"
#include "kgpm/ranking.hpp"

namespace kgpm {

// Majority: (1, 0, …, 0). Borda: (m-1, …, 0). Range: per-ballot scores
// normalized into [-1, 1].
enum class VotingRule { kMajority, kBorda, kRange };

inline constexpr VotingRule kAllRules[] = {VotingRule::kMajority, VotingRule::kBorda, VotingRule::kRange};

inline std::string_view to_string(VotingRule r) {
  switch (r) {
    case VotingRule::kMajority: return "majority";
    case VotingRule::kBorda: return "borda";
    case VotingRule::kRange: return "range";
  }
  return "?";
}

inline VotingRule parse_rule(std::string_view s) {
  if (s == "majority" || s == "major") return VotingRule::kMajority;
  if (s == "borda") return VotingRule::kBorda;
  if (s == "range") return VotingRule::kRange;
  throw ConfigError("unknown voting rule '" + std::string(s) + "'");
}

/// w_i = 2 (γ_i - min) / (max - min) - 1. A constant ballot maps to all zeros.
inline std::vector<double> normalize_range_scores(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("cannot normalize an empty score vector");
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("range normalization needs finite scores");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size(), 0.0);
  if (*hi == *lo) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = 2.0 * (scores[i] - *lo) / span - 1.0;
  return out;
}

/// One voter's preference over a candidate set. Either raw scores (higher is
/// better) or explicit positions (0 is best) define the order; equal values
/// are indifference.
struct Ballot {
  std::vector<EntityId> candidates;
  std::vector<double> raw_scores;      // aligned with candidates, may be empty
  std::vector<std::size_t> positions;  // used only when raw_scores is empty

  bool has_scores() const { return !raw_scores.empty(); }
};

inline Ballot ballot_from_scores(std::vector<EntityId> candidates, std::vector<double> scores) {
  if (candidates.size() != scores.size()) throw ContractError("candidates and scores differ in length");
  return Ballot{std::move(candidates), std::move(scores), {}};
}

// Unmasked candidates of a ranking, with their raw scores.
inline Ballot ballot_from_ranking(const QueryRanking& r) {
  Ballot b;
  for (EntityId e = 0; e < r.scores.size(); ++e) {
    if (r.is_masked(e)) continue;
    b.candidates.push_back(e);
    b.raw_scores.push_back(r.scores[e]);
  }
  return b;
}

struct Profile {
  Query query;
  std::vector<Ballot> ballots;
};

/// Consensus over a profile. Totals are accumulated in exact fixed-point
/// integers (`fixed_totals / scale`), so ballot order cannot perturb them.
struct AggregatedRanking {
  VotingRule rule = VotingRule::kBorda;
  std::vector<EntityId> candidates;       // ascending id
  std::vector<double> totals;             // aligned with candidates
  std::vector<std::int64_t> fixed_totals; // aligned with candidates
  double scale = 1.0;
  std::vector<EntityId> order;            // descending total, then ascending id
  std::vector<char> tied_with_next;       // order[i] ∼ order[i+1]

  std::size_t index_of(EntityId e) const {
    auto it = std::lower_bound(candidates.begin(), candidates.end(), e);
    if (it == candidates.end() || *it != e) throw ContractError("entity is not a candidate of this profile");
    return static_cast<std::size_t>(it - candidates.begin());
  }

  double total_of(EntityId e) const { return totals[index_of(e)]; }

  // 1-based position in `order`.
  std::size_t position_of(EntityId e) const {
    index_of(e);
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), e) - order.begin()) + 1;
  }

  bool indifferent(EntityId a, EntityId b) const { return fixed_totals[index_of(a)] == fixed_totals[index_of(b)]; }

  // Candidates sharing the maximal total, ascending id.
  std::vector<EntityId> winners() const {
    std::vector<EntityId> w;
    if (order.empty()) return w;
    const auto best = fixed_totals[index_of(order.front())];
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (fixed_totals[i] == best) w.push_back(candidates[i]);
    return w;
  }
};

namespace detail {

inline constexpr std::int64_t kUnit = std::int64_t{1} << 40;

inline double rule_scale(VotingRule r) {
  switch (r) {
    case VotingRule::kMajority: return static_cast<double>(kUnit);
    case VotingRule::kBorda: return 2.0;  // half-points from tie averaging stay integral
    case VotingRule::kRange: return static_cast<double>(kUnit);
  }
  return 1.0;
}

// Fixed-point points of one ballot, indexed like `sorted_candidates`.
inline std::vector<std::int64_t> ballot_points(const Ballot& b, VotingRule rule,
                                               std::span<const EntityId> sorted_candidates) {
  const std::size_t m = b.candidates.size();
  std::vector<std::size_t> slot(m);  // ballot index -> sorted candidate index
  for (std::size_t i = 0; i < m; ++i) {
    slot[i] = static_cast<std::size_t>(
        std::lower_bound(sorted_candidates.begin(), sorted_candidates.end(), b.candidates[i]) -
        sorted_candidates.begin());
  }
  std::vector<std::int64_t> pts(m, 0);

  if (rule == VotingRule::kRange) {
    if (!b.has_scores()) throw ContractError("range voting needs raw scores on every ballot");
    const auto w = normalize_range_scores(b.raw_scores);
    for (std::size_t i = 0; i < m; ++i) pts[slot[i]] = std::llround(w[i] * static_cast<double>(kUnit));
    return pts;
  }

  // Ballot indices best-first; `better(a, b)` is strict preference.
  auto better = [&](std::size_t x, std::size_t y) {
    return b.has_scores() ? b.raw_scores[x] > b.raw_scores[y] : b.positions[x] < b.positions[y];
  };
  if (b.has_scores()) {
    for (double s : b.raw_scores)
      if (!std::isfinite(s)) throw DataError("ballot contains a non-finite score");
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), better);

  for (std::size_t start = 0; start < m;) {
    std::size_t stop = start + 1;
    while (stop < m && !better(idx[start], idx[stop])) ++stop;
    const auto group = static_cast<std::int64_t>(stop - start);
    const auto below = static_cast<std::int64_t>(m - stop);
    for (std::size_t k = start; k < stop; ++k) {
      std::int64_t p = 0;
      if (rule == VotingRule::kMajority) {
        // the single point is split evenly among tied tops
        p = start == 0 ? (kUnit + group / 2) / group : 0;
      } else {
        // twice the mean of the Borda points the tie group occupies
        p = 2 * below + (group - 1);
      }
      pts[slot[idx[k]]] = p;
    }
    start = stop;
  }
  return pts;
}

}  // namespace detail

inline void validate_profile(const Profile& p, std::vector<EntityId>* sorted_out = nullptr) {
  if (p.ballots.empty()) throw ContractError("a profile needs at least one ballot");
  std::vector<EntityId> ref;
  for (std::size_t v = 0; v < p.ballots.size(); ++v) {
    const auto& b = p.ballots[v];
    if (b.candidates.empty()) throw ContractError("ballot has no candidates");
    if (b.has_scores() && b.raw_scores.size() != b.candidates.size())
      throw ContractError("ballot scores and candidates differ in length");
    if (!b.has_scores() && b.positions.size() != b.candidates.size())
      throw ContractError("ballot needs raw scores or one position per candidate");
    auto sorted = b.candidates;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ContractError("ballot lists a candidate twice");
    if (v == 0) ref = std::move(sorted);
    else if (sorted != ref) throw ContractError("ballots do not share the same candidate set");
  }
  if (sorted_out) *sorted_out = std::move(ref);
}

/// Sums each ballot's rule points per candidate and orders candidates by
/// descending total, breaking exact ties by ascending id (and flagging them).
inline AggregatedRanking aggregate(const Profile& profile, VotingRule rule) {
  AggregatedRanking out;
  out.rule = rule;
  validate_profile(profile, &out.candidates);
  const std::size_t m = out.candidates.size();
  out.fixed_totals.assign(m, 0);
  for (const auto& b : profile.ballots) {
    const auto pts = detail::ballot_points(b, rule, out.candidates);
    for (std::size_t i = 0; i < m; ++i) out.fixed_totals[i] += pts[i];
  }
  out.scale = detail::rule_scale(rule);
  out.totals.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.totals[i] = static_cast<double>(out.fixed_totals[i]) / out.scale;

  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return out.fixed_totals[a] > out.fixed_totals[b]; });
  out.order.reserve(m);
  for (auto i : idx) out.order.push_back(out.candidates[i]);
  out.tied_with_next.assign(m, 0);
  for (std::size_t i = 0; i + 1 < m; ++i) out.tied_with_next[i] = out.fixed_totals[idx[i]] == out.fixed_totals[idx[i + 1]];
  return out;
}

/// A rankings-backed model: for each query it serves the consensus order of
/// its voters' rankings. It has no scalar score function of its own.
class AggregatedModel {
 public:
  AggregatedModel(std::vector<std::shared_ptr<const EmbeddingModel>> voters, VotingRule rule)
      : voters_(std::move(voters)), rule_(rule) {
    if (voters_.empty()) throw ContractError("aggregation needs at least one model");
    for (const auto& v : voters_) {
      if (!v) throw ContractError("null model in aggregation");
      check_compatible(*voters_.front(), *v);
    }
  }

  VotingRule rule() const noexcept { return rule_; }
  const std::vector<std::shared_ptr<const EmbeddingModel>>& voters() const noexcept { return voters_; }
  std::size_t num_entities() const { return voters_.front()->num_entities(); }

  Profile profile(const Query& q, const KnowledgeGraph* filter) const {
    Profile p{q, {}};
    const auto mask = filter ? filter_mask(*filter, q) : std::vector<char>{};
    for (const auto& v : voters_) p.ballots.push_back(ballot_from_ranking(make_ranking(q, score_all_candidates(*v, q), mask)));
    return p;
  }

  AggregatedRanking rank(const Query& q, const KnowledgeGraph* filter = nullptr) const {
    return aggregate(profile(q, filter), rule_);
  }

  // Position of the gold answer in the consensus order (1-based).
  std::size_t gold_rank(const Query& q, const KnowledgeGraph* filter = nullptr) const {
    return rank(q, filter).position_of(q.gold);
  }

 private:
  std::vector<std::shared_ptr<const EmbeddingModel>> voters_;
  VotingRule rule_;
};

inline AggregatedModel aggregate_models(std::vector<std::shared_ptr<const EmbeddingModel>> models, VotingRule rule) {
  return AggregatedModel(std::move(models), rule);
}

// Gold positions of an aggregated model over a query list.
inline std::vector<std::size_t> gold_ranks(const AggregatedModel& m, const KnowledgeGraph& g,
                                           std::span<const Query> queries, const EvalOptions& opt = {}) {
  check_compatible(*m.voters().front(), g);
  std::vector<std::size_t> ranks(queries.size());
  parallel_for(queries.size(), opt.threads,
               [&](std::size_t i) { ranks[i] = m.gold_rank(queries[i], opt.filtered ? &g : nullptr); });
  return ranks;
}

// ---------------------------------------------------------------------------
// Profile interchange CSV: `query_id,voter_id,entity_id,raw_score,position`.
// raw_score may be empty for ordinal ballots; position may be empty when
// raw_score is present.

struct NamedProfile {
  std::string query_id;
  std::vector<std::string> voter_ids;
  Profile profile;
};

inline std::vector<NamedProfile> read_profiles_csv(std::istream& in, const std::string& source = "<profiles>") {
  std::vector<NamedProfile> out;
  std::map<std::string, std::size_t> query_index;
  std::vector<std::map<std::string, std::size_t>> voter_index;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    if (!header_seen) {
      header_seen = true;
      if (cols.size() == 5 && cols[0] == "query_id") continue;
    }
    if (cols.size() != 5) throw ParseError(source, lineno, "expected 5 columns");
    auto [qit, q_new] = query_index.emplace(cols[0], out.size());
    if (q_new) {
      out.push_back({cols[0], {}, {}});
      voter_index.emplace_back();
    }
    auto& np = out[qit->second];
    auto& vmap = voter_index[qit->second];
    auto [vit, v_new] = vmap.emplace(cols[1], np.profile.ballots.size());
    if (v_new) {
      np.voter_ids.push_back(cols[1]);
      np.profile.ballots.emplace_back();
    }
    auto& ballot = np.profile.ballots[vit->second];
    try {
      ballot.candidates.push_back(static_cast<EntityId>(std::stoul(cols[2])));
      if (!cols[3].empty()) ballot.raw_scores.push_back(std::stod(cols[3]));
      if (!cols[4].empty()) ballot.positions.push_back(std::stoul(cols[4]));
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "non-numeric entity_id, raw_score or position");
    }
  }
  for (auto& np : out) {
    for (auto& b : np.profile.ballots) {
      if (!b.raw_scores.empty() && b.raw_scores.size() != b.candidates.size())
        throw ParseError(source, 0, "query " + np.query_id + ": raw_score must be given for all rows of a ballot or none");
      if (b.has_scores()) b.positions.clear();
    }
    validate_profile(np.profile);
  }
  return out;
}

inline void write_profiles_csv(std::ostream& out, std::span<const NamedProfile> profiles) {
  out.precision(17);
  out << "query_id,voter_id,entity_id,raw_score,position\n";
  for (const auto& np : profiles) {
    for (std::size_t v = 0; v < np.profile.ballots.size(); ++v) {
      const auto& b = np.profile.ballots[v];
      for (std::size_t i = 0; i < b.candidates.size(); ++i) {
        out << np.query_id << ',' << np.voter_ids[v] << ',' << b.candidates[i] << ',';
        if (b.has_scores()) out << b.raw_scores[i];
        out << ',';
        if (!b.positions.empty()) out << b.positions[i];
        out << '\n';
      }
    }
  }
}

// CSV `query_id,entity_id,total,position,tied_with_next`.
inline void write_aggregated_csv(std::ostream& out, const std::string& query_id, const AggregatedRanking& r,
                                 bool header) {
  out.precision(17);
  if (header) out << "query_id,entity_id,total,position,tied_with_next\n";
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    out << query_id << ',' << r.order[i] << ',' << r.total_of(r.order[i]) << ',' << (i + 1) << ','
        << static_cast<int>(r.tied_with_next[i]) << '\n';
  }
}

}  // namespace kgpm
