#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/rng.hpp"
#include "kgpm/synthetic.hpp"
#include "kgpm/trainer.hpp"

namespace kgpm::testing {

inline std::string data_path(const std::string& name) { return std::string(KGPM_DATA_DIR) + "/" + name; }

inline const KnowledgeGraph& nations() {
  static const KnowledgeGraph g = load_graph(data_path("nations/train.txt"), data_path("nations/valid.txt"),
                                             data_path("nations/test.txt"));
  return g;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("kgpm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small random graph: every entity appears, splits are disjoint.
inline KnowledgeGraph random_graph(Xoshiro256& rng, std::size_t n_ent, std::size_t n_rel, std::size_t n_train,
                                   std::size_t n_valid, std::size_t n_test) {
  Dictionary ents, rels;
  for (std::size_t e = 0; e < n_ent; ++e) ents.intern("e" + std::to_string(e));
  for (std::size_t r = 0; r < n_rel; ++r) rels.intern("r" + std::to_string(r));
  std::unordered_set<Triple, TripleHash> seen;
  std::vector<Triple> out[3];
  const std::size_t want[3] = {n_train, n_valid, n_test};
  for (int s = 0; s < 3; ++s) {
    while (out[s].size() < want[s]) {
      Triple t{static_cast<EntityId>(rng.below(n_ent)), static_cast<RelationId>(rng.below(n_rel)),
               static_cast<EntityId>(rng.below(n_ent))};
      if (seen.insert(t).second) out[s].push_back(t);
    }
  }
  return KnowledgeGraph::from_triples(std::move(ents), std::move(rels), std::move(out[0]), std::move(out[1]),
                                      std::move(out[2]));
}

// Model with uniform random parameters in [-1, 1].
inline EmbeddingModel random_model(Xoshiro256& rng, Method method, int dim, std::size_t n_ent, std::size_t n_rel) {
  ModelConfig c;
  c.method = method;
  c.embedding_dim = dim;
  auto m = make_zero_model(c, n_ent, n_rel);
  for (auto& v : m.entities.data()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : m.relations.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

inline ModelConfig small_config(Method method = Method::kComplEx, int epochs = 20) {
  ModelConfig c;
  c.method = method;
  c.embedding_dim = 8;
  c.epochs = epochs;
  c.negatives_per_positive = 4;
  return c;
}

}  // namespace kgpm::testing
