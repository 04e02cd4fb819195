// Three score ballots over four candidates for one query, aggregated with
// every voting rule. Candidates: A=0, B=1, C=2, D=3.

#include <cstdio>

#include "kgpm/voting.hpp"

int main() {
  using namespace kgpm;
  const char* names = "ABCD";
  Profile p;
  p.query = {Direction::kTail, 0, 0, 1};
  p.ballots = {
      ballot_from_scores({0, 1, 2, 3}, {1, 8, 100, 6}),
      ballot_from_scores({0, 1, 2, 3}, {5, 8, 6, 7}),
      ballot_from_scores({0, 1, 2, 3}, {2, 40, 10, 1}),
  };

  std::printf("normalized range scores\n");
  for (std::size_t v = 0; v < p.ballots.size(); ++v) {
    const auto w = normalize_range_scores(p.ballots[v].raw_scores);
    std::printf("  ballot %zu:", v + 1);
    for (std::size_t i = 0; i < w.size(); ++i) std::printf("  %c %+.4f", names[i], w[i]);
    std::printf("\n");
  }
  for (auto rule : kAllRules) {
    const auto r = aggregate(p, rule);
    std::printf("%-8s", std::string(to_string(rule)).c_str());
    for (std::size_t i = 0; i < r.order.size(); ++i) {
      std::printf(" %c (%.4g) %s", names[r.order[i]], r.total_of(r.order[i]),
                  i + 1 == r.order.size() ? "" : (r.tied_with_next[i] ? "~" : ">"));
    }
    std::printf("\n");
  }
}
