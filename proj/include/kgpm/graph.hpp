#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/rng.hpp"

namespace kgpm {

// Dense indices into the entity and relation dictionaries.
using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    return static_cast<std::size_t>(fnv1a_u64(t.tail, fnv1a_u64(t.relation, fnv1a_u64(t.head))));
  }
};

enum class Split { kTrain, kValid, kTest };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid" || s == "validation") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

// kTail asks <h, r, ?>; kHead asks <?, r, t>.
enum class Direction : std::uint8_t { kTail, kHead };

inline std::string_view to_string(Direction d) { return d == Direction::kTail ? "tail" : "head"; }

struct Query {
  Direction direction = Direction::kTail;
  EntityId fixed = 0;
  RelationId relation = 0;
  EntityId gold = 0;

  // The triple obtained by filling the open slot with `candidate`.
  Triple complete(EntityId candidate) const {
    return direction == Direction::kTail ? Triple{fixed, relation, candidate}
                                         : Triple{candidate, relation, fixed};
  }

  Triple gold_triple() const { return complete(gold); }

  friend bool operator==(const Query&, const Query&) = default;
};

// Bijection between string labels and contiguous ids 0..size()-1, in order
// of first insertion.
class Dictionary {
 public:
  std::uint32_t intern(std::string_view label) {
    auto it = index_.find(std::string(label));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(labels_.size());
    labels_.emplace_back(label);
    index_.emplace(labels_.back(), id);
    return id;
  }

  std::optional<std::uint32_t> find(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& label(std::uint32_t id) const {
    if (id >= labels_.size()) throw BoundsError("dictionary id " + std::to_string(id) + " out of range");
    return labels_[id];
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  // Two-column TSV `id<TAB>label`, one line per id in ascending order.
  void dump(std::ostream& out) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) out << i << '\t' << labels_[i] << '\n';
  }

  static Dictionary load(std::istream& in, const std::string& source = "<dictionary>") {
    Dictionary dict;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
        throw ParseError(source, lineno, "expected `id<TAB>label`");
      }
      std::uint64_t id = 0;
      try {
        std::size_t used = 0;
        id = std::stoull(line.substr(0, tab), &used);
        if (used != tab) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(source, lineno, "id is not a nonnegative integer");
      }
      if (id != dict.size()) throw ParseError(source, lineno, "ids must be contiguous from 0");
      const auto label = line.substr(tab + 1);
      if (dict.find(label)) throw ParseError(source, lineno, "duplicate label '" + label + "'");
      dict.intern(label);
    }
    return dict;
  }

  friend bool operator==(const Dictionary& a, const Dictionary& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Immutable, indexed triple store with train/valid/test splits.
///
/// `known_true` is the union of all three splits and backs filtered
/// evaluation. Splits are pairwise disjoint; construction enforces it.
class KnowledgeGraph {
 public:
  static KnowledgeGraph from_triples(Dictionary entities, Dictionary relations, std::vector<Triple> train,
                                     std::vector<Triple> valid, std::vector<Triple> test) {
    KnowledgeGraph g;
    g.entities_ = std::move(entities);
    g.relations_ = std::move(relations);
    g.splits_[0] = std::move(train);
    g.splits_[1] = std::move(valid);
    g.splits_[2] = std::move(test);
    g.index();
    return g;
  }

  const Dictionary& entities() const noexcept { return entities_; }
  const Dictionary& relations() const noexcept { return relations_; }
  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }

  const std::vector<Triple>& split(Split s) const { return splits_[static_cast<int>(s)]; }
  const std::vector<Triple>& train() const { return split(Split::kTrain); }
  const std::vector<Triple>& valid() const { return split(Split::kValid); }
  const std::vector<Triple>& test() const { return split(Split::kTest); }

  std::size_t num_known() const noexcept { return known_.size(); }
  bool is_known(const Triple& t) const { return known_.contains(t); }

  // Entities e with <h, r, e> known true, ascending.
  std::span<const EntityId> known_tails(EntityId h, RelationId r) const { return lookup(tails_, key(h, r)); }
  // Entities e with <e, r, t> known true, ascending.
  std::span<const EntityId> known_heads(RelationId r, EntityId t) const { return lookup(heads_, key(t, r)); }

  // Known answers to the query's open slot (gold included).
  std::span<const EntityId> known_answers(const Query& q) const {
    return q.direction == Direction::kTail ? known_tails(q.fixed, q.relation) : known_heads(q.relation, q.fixed);
  }

  std::size_t duplicates_dropped(Split s) const { return dropped_[static_cast<int>(s)]; }
  void set_duplicates_dropped(Split s, std::size_t n) { dropped_[static_cast<int>(s)] = n; }

  // Hash over dictionaries and split contents; stamped into checkpoints.
  std::uint64_t content_hash() const { return hash_; }
  std::string content_hash_hex() const { return hex64(hash_); }

  void check_triple(const Triple& t) const {
    if (t.head >= num_entities() || t.tail >= num_entities()) throw BoundsError("entity id out of range");
    if (t.relation >= num_relations()) throw BoundsError("relation id out of range");
  }

 private:
  static std::uint64_t key(std::uint32_t e, std::uint32_t r) { return (static_cast<std::uint64_t>(e) << 32) | r; }

  static std::span<const EntityId> lookup(const std::unordered_map<std::uint64_t, std::vector<EntityId>>& m,
                                          std::uint64_t k) {
    auto it = m.find(k);
    if (it == m.end()) return {};
    return it->second;
  }

  void index() {
    if (splits_[0].empty()) throw DatasetError("training split is empty");
    for (int s = 0; s < 3; ++s) {
      for (const auto& t : splits_[s]) {
        check_triple(t);
        if (!known_.insert(t).second) {
          throw DatasetError("triple appears in more than one split (first repeat in " +
                             std::string(to_string(static_cast<Split>(s))) + ")");
        }
        tails_[key(t.head, t.relation)].push_back(t.tail);
        heads_[key(t.tail, t.relation)].push_back(t.head);
      }
    }
    for (auto* m : {&tails_, &heads_}) {
      for (auto& [k, v] : *m) std::sort(v.begin(), v.end());
    }
    std::uint64_t h = kFnvOffset;
    for (const auto* d : {&entities_, &relations_}) {
      h = fnv1a_u64(d->size(), h);
      for (const auto& l : d->labels()) h = fnv1a(l, fnv1a_u64(l.size(), h));
    }
    for (const auto& split : splits_) {
      h = fnv1a_u64(split.size(), h);
      for (const auto& t : split) h = fnv1a_u64(t.tail, fnv1a_u64(t.relation, fnv1a_u64(t.head, h)));
    }
    hash_ = h;
  }

  Dictionary entities_;
  Dictionary relations_;
  std::vector<Triple> splits_[3];
  std::size_t dropped_[3] = {0, 0, 0};
  std::unordered_set<Triple, TripleHash> known_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
  std::uint64_t hash_ = 0;
};

namespace detail {

struct LabeledTriple {
  std::string head, relation, tail;
};

inline std::vector<LabeledTriple> read_tsv_triples(std::istream& in, const std::string& source) {
  std::vector<LabeledTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos || line.find('\t', b + 1) != std::string::npos) {
      throw ParseError(source, lineno, "expected 3 tab-separated columns `head<TAB>relation<TAB>tail`");
    }
    LabeledTriple t{line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)};
    if (t.head.empty() || t.relation.empty() || t.tail.empty()) throw ParseError(source, lineno, "empty column");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

/// Builds a graph from three TSV streams. Dictionary ids follow first
/// appearance across train, then valid, then test. Repeated lines inside a
/// split are dropped and counted; a triple shared between splits is an error.
inline KnowledgeGraph parse_graph(std::istream& train, std::istream& valid, std::istream& test,
                                  const std::string& train_name = "train", const std::string& valid_name = "valid",
                                  const std::string& test_name = "test") {
  Dictionary entities, relations;
  std::vector<Triple> splits[3];
  std::size_t dropped[3] = {0, 0, 0};
  std::istream* streams[3] = {&train, &valid, &test};
  const std::string* names[3] = {&train_name, &valid_name, &test_name};
  for (int s = 0; s < 3; ++s) {
    std::unordered_set<Triple, TripleHash> seen;
    for (const auto& lt : detail::read_tsv_triples(*streams[s], *names[s])) {
      Triple t{entities.intern(lt.head), relations.intern(lt.relation), entities.intern(lt.tail)};
      if (!seen.insert(t).second) {
        ++dropped[s];
        continue;
      }
      splits[s].push_back(t);
    }
  }
  auto g = KnowledgeGraph::from_triples(std::move(entities), std::move(relations), std::move(splits[0]),
                                        std::move(splits[1]), std::move(splits[2]));
  for (int s = 0; s < 3; ++s) g.set_duplicates_dropped(static_cast<Split>(s), dropped[s]);
  return g;
}

inline KnowledgeGraph load_graph(const std::string& train_path, const std::string& valid_path,
                                 const std::string& test_path) {
  auto open = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + p + "'");
    return in;
  };
  auto tr = open(train_path);
  auto va = open(valid_path);
  auto te = open(test_path);
  return parse_graph(tr, va, te, train_path, valid_path, test_path);
}

// Two queries per triple, in file order: <h, r, ?> (gold t) then <?, r, t> (gold h).
inline std::vector<Query> queries_from_split(const KnowledgeGraph& g, Split split) {
  if (split == Split::kTrain) throw ContractError("queries are drawn from the valid or test split");
  std::vector<Query> out;
  out.reserve(2 * g.split(split).size());
  for (const auto& t : g.split(split)) {
    out.push_back({Direction::kTail, t.head, t.relation, t.tail});
    out.push_back({Direction::kHead, t.tail, t.relation, t.head});
  }
  return out;
}

// Number of training triples mentioning each entity (a self-loop counts twice).
inline std::vector<std::size_t> entity_frequency(const KnowledgeGraph& g) {
  std::vector<std::size_t> counts(g.num_entities(), 0);
  for (const auto& t : g.train()) {
    ++counts[t.head];
    ++counts[t.tail];
  }
  return counts;
}

inline std::vector<std::size_t> relation_frequency(const KnowledgeGraph& g) {
  std::vector<std::size_t> counts(g.num_relations(), 0);
  for (const auto& t : g.train()) ++counts[t.relation];
  return counts;
}

}  // namespace kgpm
