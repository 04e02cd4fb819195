#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "kgpm/ranking.hpp"
#include "kgpm/trainer.hpp"
#include "kgpm/voting.hpp"
#include "test_util.hpp"

namespace kgpm::oracle {

// Sort-based oracle: rank = 1 + position of the first candidate with the
// same score in the descending list (last position for pessimistic).
inline double sort_oracle_rank(std::span<const double> scores, std::span<const char> masked, EntityId e, TieMode mode) {
  std::vector<double> kept;
  for (EntityId d = 0; d < scores.size(); ++d)
    if (d == e || masked.empty() || !masked[d]) kept.push_back(scores[d]);
  std::sort(kept.begin(), kept.end(), std::greater<>());
  const auto first = static_cast<double>(std::find(kept.begin(), kept.end(), scores[e]) - kept.begin()) + 1;
  const auto last = static_cast<double>(kept.rend() - std::find(kept.rbegin(), kept.rend(), scores[e]));
  switch (mode) {
    case TieMode::kOptimistic: return first;
    case TieMode::kPessimistic: return last;
    case TieMode::kMean: return 0.5 * (first + last);
  }
  return 0;
}

// Brute force over triples: known-true answers are found by scanning every
// split instead of using the graph's index.
inline std::vector<char> brute_hits(const EmbeddingModel& m, const KnowledgeGraph& g, std::span<const Query> qs, int k,
                             bool filtered, TieMode mode) {
  std::vector<char> out;
  for (const auto& q : qs) {
    std::vector<double> scores(g.num_entities());
    std::vector<char> mask(g.num_entities(), 0);
    for (EntityId e = 0; e < g.num_entities(); ++e) scores[e] = score(m, q.complete(e));
    if (filtered) {
      for (auto s : {Split::kTrain, Split::kValid, Split::kTest})
        for (const auto& t : g.split(s))
          for (EntityId e = 0; e < g.num_entities(); ++e)
            if (e != q.gold && t == q.complete(e)) mask[e] = 1;
    }
    out.push_back(sort_oracle_rank(scores, mask, q.gold, mode) <= k);
  }
  return out;
}

using cd = std::complex<double>;

inline std::vector<cd> as_complex(std::span<const double> v) {
  std::vector<cd> out;
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) out.emplace_back(v[i], v[i + 1]);
  return out;
}

// Direct-definition scorers, written independently of the kernels.
inline double oracle_score(const EmbeddingModel& m, const Triple& tr) {
  const auto h = m.entities.row(tr.head);
  const auto r = m.relations.row(tr.relation);
  const auto t = m.entities.row(tr.tail);
  const auto d = static_cast<std::size_t>(m.config.embedding_dim);
  switch (m.config.method) {
    case Method::kTransE: {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += std::pow(h[i] + r[i] - t[i], 2);
      return -std::sqrt(s);
    }
    case Method::kDistMult: {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += h[i] * r[i] * t[i];
      return s;
    }
    case Method::kComplEx: {
      const auto hc = as_complex(h), rc = as_complex(r), tc = as_complex(t);
      cd s = 0;
      for (std::size_t i = 0; i < d; ++i) s += hc[i] * rc[i] * std::conj(tc[i]);
      return s.real();
    }
    case Method::kRotatE: {
      const auto hc = as_complex(h), tc = as_complex(t);
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += std::norm(hc[i] * std::polar(1.0, r[i]) - tc[i]);
      return -std::sqrt(s);
    }
    case Method::kRescal: {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s += h[i] * r[i * d + j] * t[j];
      return s;
    }
  }
  return 0;
}

// Central differences against the analytic gradient of the full example loss.
inline double gradient_rel_error(Method method, LossKind loss) {
  Xoshiro256 rng(static_cast<std::uint64_t>(method) * 10 + static_cast<std::uint64_t>(loss) + 1);
  auto m = testing::random_model(rng, method, 3, 5, 2);
  m.config.loss = loss;
  m.config.margin = 100.0;  // keeps every hinge active
  m.config.l2_weight = 0.05;
  const Triple pos{0, 1, 2};
  const std::vector<Triple> negs{{0, 1, 3}, {4, 1, 2}, {0, 1, 0}, {1, 0, 1}};

  GradientBuffer grad(m);
  example_loss(m, pos, negs, &grad, 1.0);
  std::vector<double> analytic, numeric;
  const double h = 1e-4;
  auto probe = [&](Matrix& table, const Matrix& g) {
    for (std::size_t i = 0; i < table.data().size(); ++i) {
      const double saved = table.data()[i];
      table.data()[i] = saved + h;
      const double up = example_loss(m, pos, negs);
      table.data()[i] = saved - h;
      const double down = example_loss(m, pos, negs);
      table.data()[i] = saved;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(g.data()[i]);
    }
  };
  probe(m.entities, grad.entities());
  probe(m.relations, grad.relations());
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += std::pow(analytic[i] - numeric[i], 2);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na), std::sqrt(nn));
}

// ---------------------------------------------------------------------------
// Random profiles: ≤ 6 candidates, ≤ 7 voters, integer scores from a narrow
// range so that ties are common.

struct ProfileGen {
  Xoshiro256 rng;
  explicit ProfileGen(std::uint64_t seed) : rng(seed) {}

  std::vector<EntityId> candidates() {
    const std::size_t m = 1 + rng.below(6);
    std::vector<EntityId> pool(40);
    std::iota(pool.begin(), pool.end(), EntityId{0});
    rng.shuffle(std::span<EntityId>(pool));
    pool.resize(m);
    return pool;
  }

  Ballot ballot(std::vector<EntityId> cands, bool ordinal) {
    rng.shuffle(std::span<EntityId>(cands));
    Ballot b;
    b.candidates = cands;
    const std::size_t spread = 1 + rng.below(5);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (ordinal) b.positions.push_back(rng.below(spread));
      else b.raw_scores.push_back(static_cast<double>(rng.below(spread)) - 2.0 + 0.25 * static_cast<double>(rng.below(3)));
    }
    return b;
  }

  Profile profile(const std::vector<EntityId>& cands, std::size_t voters, bool ordinal) {
    Profile p;
    for (std::size_t v = 0; v < voters; ++v) p.ballots.push_back(ballot(cands, ordinal));
    return p;
  }

  Profile profile() {
    const auto c = candidates();
    return profile(c, 1 + rng.below(7), rng.below(4) == 0);
  }
};

inline bool supports(VotingRule rule, const Profile& p) {
  return rule != VotingRule::kRange || std::all_of(p.ballots.begin(), p.ballots.end(),
                                                    [](const Ballot& b) { return b.has_scores(); });
}

inline std::map<EntityId, std::int64_t> totals_by_id(const AggregatedRanking& r) {
  std::map<EntityId, std::int64_t> m;
  for (std::size_t i = 0; i < r.candidates.size(); ++i) m[r.candidates[i]] = r.fixed_totals[i];
  return m;
}

// Brute force: ranks by counting, Pearson from raw sums.
inline double brute_rho(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto a = ranks(x), b = ranks(y);
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  return (sab - sa * sb / n) / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n));
}

// Borda points by definition: strictly-below count plus half the tied others.
inline std::map<EntityId, double> borda_oracle(const Profile& p) {
  std::map<EntityId, double> oracle;
  for (const auto& b : p.ballots) {
    for (std::size_t i = 0; i < b.candidates.size(); ++i) {
      double pts = 0;
      for (std::size_t j = 0; j < b.candidates.size(); ++j) {
        if (i == j) continue;
        const bool below = b.has_scores() ? b.raw_scores[j] < b.raw_scores[i] : b.positions[j] > b.positions[i];
        const bool tied = b.has_scores() ? b.raw_scores[j] == b.raw_scores[i] : b.positions[j] == b.positions[i];
        pts += below ? 1.0 : tied ? 0.5 : 0.0;
      }
      oracle[b.candidates[i]] += pts;
    }
  }
  return oracle;
}

// Answer set by a plain loop over candidates.
inline std::vector<EntityId> answer_set_oracle(const EmbeddingModel& m, const Query& q, double tau,
                                               const KnowledgeGraph* filter) {
  std::vector<EntityId> out;
  for (EntityId e = 0; e < m.entities.rows(); ++e) {
    const bool masked = filter && e != q.gold && filter->is_known(q.complete(e));
    if (!masked && score(m, q.complete(e)) >= tau) out.push_back(e);
  }
  return out;
}

}  // namespace kgpm::oracle
