#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "kgpm/graph.hpp"
#include "test_util.hpp"

namespace kgpm {
namespace {

KnowledgeGraph parse(const std::string& train, const std::string& valid = "", const std::string& test = "") {
  std::istringstream a(train), b(valid), c(test);
  return parse_graph(a, b, c, "train", "valid", "test");
}

TEST(Graph, NationsStatistics) {
  const auto& g = testing::nations();
  EXPECT_EQ(g.num_entities(), 14u);
  EXPECT_EQ(g.num_relations(), 55u);
  EXPECT_EQ(g.train().size(), 1592u);
  EXPECT_EQ(g.valid().size(), 199u);
  EXPECT_EQ(g.test().size(), 201u);
  EXPECT_EQ(queries_from_split(g, Split::kTest).size(), 402u);
}

TEST(Graph, NationsRelationFrequencySumsToTrainSize) {
  const auto f = relation_frequency(testing::nations());
  EXPECT_EQ(std::accumulate(f.begin(), f.end(), std::size_t{0}), 1592u);
  const auto e = entity_frequency(testing::nations());
  EXPECT_EQ(std::accumulate(e.begin(), e.end(), std::size_t{0}), 2 * 1592u);
}

TEST(Graph, IdsFollowFirstAppearance) {
  const auto g = parse("b\tr\ta\na\ts\tc\n", "c\tr\tb\n", "a\tr\tc\n");
  EXPECT_EQ(*g.entities().find("b"), 0u);
  EXPECT_EQ(*g.entities().find("a"), 1u);
  EXPECT_EQ(*g.entities().find("c"), 2u);
  EXPECT_EQ(*g.relations().find("s"), 1u);
}

TEST(Graph, DuplicateLinesDroppedAndCounted) {
  const auto g = parse("a\tr\tb\na\tr\tb\nb\tr\ta\n", "a\tr\tc\n", "b\tr\tc\n");
  EXPECT_EQ(g.train().size(), 2u);
  EXPECT_EQ(g.duplicates_dropped(Split::kTrain), 1u);
}

TEST(Graph, MalformedLineReportsLineNumber) {
  try {
    parse("a\tr\tb\na\tr\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Graph, OverlappingSplitsRejected) {
  EXPECT_THROW(parse("a\tr\tb\n", "a\tr\tb\n", "b\tr\ta\n"), DatasetError);
}

TEST(Graph, EmptyTrainRejected) { EXPECT_THROW(parse("", "a\tr\tb\n", "b\tr\ta\n"), DatasetError); }

TEST(Graph, KnownAnswersCoverAllSplits) {
  const auto g = parse("a\tr\tb\n", "a\tr\tc\n", "a\tr\td\n");
  const Query q{Direction::kTail, *g.entities().find("a"), 0, *g.entities().find("d")};
  EXPECT_EQ(g.known_answers(q).size(), 3u);
  const Query h{Direction::kHead, *g.entities().find("b"), 0, *g.entities().find("a")};
  EXPECT_EQ(g.known_answers(h).size(), 1u);
}

TEST(Graph, QueriesFromTrainIsAContractError) {
  EXPECT_THROW(queries_from_split(testing::nations(), Split::kTrain), ContractError);
}

TEST(Graph, QueryOrderIsTailThenHead) {
  const auto g = parse("a\tr\tb\n", "b\tr\tc\n", "c\tr\ta\n");
  const auto q = queries_from_split(g, Split::kTest);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].direction, Direction::kTail);
  EXPECT_EQ(q[0].gold, *g.entities().find("a"));
  EXPECT_EQ(q[1].direction, Direction::kHead);
  EXPECT_EQ(q[1].gold, *g.entities().find("c"));
  EXPECT_EQ(q[0].gold_triple(), q[1].gold_triple());
}

TEST(Graph, DictionaryRoundTrip) {
  const auto& g = testing::nations();
  std::stringstream ss;
  g.entities().dump(ss);
  EXPECT_EQ(Dictionary::load(ss), g.entities());
}

TEST(Graph, LabelOutOfRange) { EXPECT_THROW(testing::nations().entities().label(99), BoundsError); }

TEST(Graph, ContentHashDependsOnBytes) {
  const auto a = parse("a\tr\tb\n", "b\tr\tc\n", "c\tr\ta\n");
  const auto b = parse("a\tr\tb\n", "b\tr\tc\n", "c\tr\ta\n");
  const auto c = parse("a\tr\tb\n", "b\tr\tc\n", "c\tr\tb\n");
  EXPECT_EQ(a.content_hash(), b.content_hash());
  EXPECT_NE(a.content_hash(), c.content_hash());
}

TEST(Synthetic, DeterministicAndDisjoint) {
  SyntheticSpec s;
  const auto a = make_synthetic_graph(s);
  const auto b = make_synthetic_graph(s);
  EXPECT_EQ(a.content_hash(), b.content_hash());
  std::size_t expected_train = 0;
  for (auto n : s.train_per_relation) expected_train += n;
  EXPECT_EQ(a.train().size(), expected_train);
  // Tails land in the relation's target cluster.
  for (const auto& t : a.train()) {
    for (const auto& u : a.train()) {
      if (t.relation == u.relation && t.head / s.cluster_size == u.head / s.cluster_size)
        EXPECT_EQ(t.tail / s.cluster_size, u.tail / s.cluster_size);
    }
  }
}

}  // namespace
}  // namespace kgpm
