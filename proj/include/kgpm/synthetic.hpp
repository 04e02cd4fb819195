#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/rng.hpp"

namespace kgpm {

/// Clustered random graph. Entities fall into equal clusters; relation r maps
/// cluster c to cluster σ_r(c) for a random permutation σ_r, and each triple
/// pairs a random head with a random tail of the target cluster. Relations
/// with many training triples are learnable; rare ones are not.
struct SyntheticSpec {
  std::size_t clusters = 4;
  std::size_t cluster_size = 5;
  std::vector<std::size_t> train_per_relation{60, 60, 4, 4};
  std::size_t valid_per_relation = 3;
  std::size_t test_per_relation = 6;
  std::uint64_t seed = 0;
};

inline KnowledgeGraph make_synthetic_graph(const SyntheticSpec& spec) {
  const std::size_t n = spec.clusters * spec.cluster_size;
  if (spec.clusters < 1 || spec.cluster_size < 1 || n < 2) throw ConfigError("synthetic graph needs >= 2 entities");
  if (spec.train_per_relation.empty()) throw ConfigError("synthetic graph needs at least one relation");
  Xoshiro256 rng(derive_seed(spec.seed, "synthetic"));
  Dictionary entities, relations;
  for (std::size_t e = 0; e < n; ++e) entities.intern("e" + std::to_string(e));
  for (std::size_t r = 0; r < spec.train_per_relation.size(); ++r) relations.intern("r" + std::to_string(r));

  std::vector<Triple> splits[3];
  std::unordered_set<Triple, TripleHash> seen;
  for (std::size_t r = 0; r < spec.train_per_relation.size(); ++r) {
    std::vector<std::size_t> sigma(spec.clusters);
    for (std::size_t c = 0; c < sigma.size(); ++c) sigma[c] = c;
    rng.shuffle(std::span<std::size_t>(sigma));
    const std::size_t want[3] = {spec.train_per_relation[r], spec.valid_per_relation, spec.test_per_relation};
    const std::size_t capacity = n * spec.cluster_size;
    if (want[0] + want[1] + want[2] > capacity) throw ConfigError("synthetic relation asks for more triples than exist");
    for (int s = 0; s < 3; ++s) {
      for (std::size_t made = 0; made < want[s];) {
        const auto h = static_cast<EntityId>(rng.below(n));
        const std::size_t target = sigma[h / spec.cluster_size];
        const auto t = static_cast<EntityId>(target * spec.cluster_size + rng.below(spec.cluster_size));
        const Triple tr{h, static_cast<RelationId>(r), t};
        if (!seen.insert(tr).second) continue;
        splits[s].push_back(tr);
        ++made;
      }
    }
  }
  return KnowledgeGraph::from_triples(std::move(entities), std::move(relations), std::move(splits[0]),
                                      std::move(splits[1]), std::move(splits[2]));
}

}  // namespace kgpm
