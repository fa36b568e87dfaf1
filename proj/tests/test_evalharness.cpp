#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "carp/evalharness.hpp"
#include "carp/protocols.hpp"

using namespace carp;

namespace {

std::vector<EvalPair> random_pairs(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<EvalPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    pairs[i].pair_id = std::to_string(i);
    pairs[i].score_a = d(gen);
    pairs[i].score_b = d(gen) + 0.5;
    pairs[i].label = i % 3 == 0 ? Preferred::kB : Preferred::kA;
    pairs[i].domain_tag = i % 2 == 0 ? "even" : "odd";
  }
  return pairs;
}

}  // namespace

TEST_CASE("selection accuracy counts and ties") {
  std::vector<EvalPair> pairs{{"a", 1.0, 2.0, Preferred::kA, "x"},
                              {"b", 1.0, 2.0, Preferred::kB, "x"},
                              {"c", 3.0, 3.0, Preferred::kA, "y"},
                              {"d", 0.5, -1.0, Preferred::kB, "y"}};
  const AccuracyReport low = selection_accuracy(pairs, SelectionRule::kLowerWins);
  CHECK(low.correct == 2);
  CHECK(low.total == 4);
  CHECK(low.accuracy == 0.5);
  CHECK(low.per_domain.at("x").correct == 1);
  CHECK(low.per_domain.at("y").correct == 1);
  const AccuracyReport high = selection_accuracy(pairs, SelectionRule::kHigherWins);
  CHECK(high.correct == 1);  // the tie is wrong under both rules
  std::vector<EvalPair> none;
  CHECK_THROWS_AS(selection_accuracy(none, SelectionRule::kLowerWins), DegenerateInputError);
  pairs[0].score_a = NAN;
  CHECK_THROWS_AS(selection_accuracy(pairs, SelectionRule::kLowerWins), DegenerateInputError);
}

TEST_CASE("selection accuracy is invariant under strictly monotone transforms") {
  std::mt19937_64 gen(1);
  auto pairs = random_pairs(gen, 500);
  const auto base = selection_accuracy(pairs, SelectionRule::kLowerWins);
  for (auto& p : pairs) {
    p.score_a = std::exp(3.0 * p.score_a) + 1.0;
    p.score_b = std::exp(3.0 * p.score_b) + 1.0;
  }
  const auto moved = selection_accuracy(pairs, SelectionRule::kLowerWins);
  CHECK(moved.correct == base.correct);
  // A decreasing transform swaps the rules.
  for (auto& p : pairs) {
    p.score_a = -p.score_a;
    p.score_b = -p.score_b;
  }
  CHECK(selection_accuracy(pairs, SelectionRule::kHigherWins).correct == base.correct);
}

TEST_CASE("label-randomized pairs stay near chance") {
  std::mt19937_64 gen(2);
  std::bernoulli_distribution coin(0.5);
  auto pairs = random_pairs(gen, 4000);
  for (auto& p : pairs) p.label = coin(gen) ? Preferred::kA : Preferred::kB;
  const double acc = selection_accuracy(pairs, SelectionRule::kLowerWins).accuracy;
  CHECK(std::abs(acc - 0.5) < 3.0 / std::sqrt(4000.0));
  CHECK(preferred_from_string(to_string(Preferred::kB)) == Preferred::kB);
  CHECK(selection_rule_from_string("higher_wins") == SelectionRule::kHigherWins);
  CHECK_THROWS_AS(preferred_from_string("c_preferred"), ConfigError);
}

TEST_CASE("best of n") {
  BonCandidateSet s{"p", {{"r2", 1.0, 5.0, 1.0}, {"r1", 3.0, 4.0, 2.0}, {"r0", 3.0, 0.0, 3.0}}};
  // Weight 0: plain reward argmax; the tie between r1 and r0 goes to r0.
  CHECK(best_of_n(s, 0.0) == "r0");
  std::size_t plain = 0;
  for (std::size_t i = 1; i < s.candidates.size(); ++i)
    if (s.candidates[i].reward > s.candidates[plain].reward) plain = i;
  CHECK(s.candidates[best_of_n_index(s, 0.0)].reward == s.candidates[plain].reward);
  CHECK(best_of_n(s, 1.0) == "r0");
  s.candidates[2].sas = 10.0;
  CHECK(best_of_n(s, 1.0) == "r1");
  CHECK(best_of_n(s, 100.0) == "r1");
  BonCandidateSet empty{"e", {}};
  CHECK_THROWS_AS(best_of_n(empty, 0.0), DegenerateInputError);
}

TEST_CASE("histogram conserves counts and matches a recount") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> d(0.0, 2.0);
  std::vector<double> v(5000);
  for (double& x : v) x = d(gen);
  v.push_back(v[0]);  // duplicates and exact extremes
  const Histogram h = distribution_report(v, 17);
  CHECK(h.total() == v.size());
  CHECK(h.edges.size() == 18);
  CHECK(h.edges.front() == *std::min_element(v.begin(), v.end()));
  CHECK(h.edges.back() == *std::max_element(v.begin(), v.end()));
  for (std::size_t b = 0; b < 17; ++b) {
    std::size_t count = 0;
    for (double x : v)
      if (x >= h.edges[b] && (x < h.edges[b + 1] || (b == 16 && x == h.edges[17]))) ++count;
    CHECK(h.counts[b] == count);
  }
  auto shuffled = v;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  CHECK(distribution_report(shuffled, 17).counts == h.counts);

  const std::vector<double> same(7, 2.5);
  const Histogram flat = distribution_report(same, 4);
  CHECK(flat.counts[0] == 7);
  CHECK(flat.total() == 7);
  std::vector<double> none;
  CHECK_THROWS_AS(distribution_report(none, 3), DegenerateInputError);
  CHECK(h.to_csv().rfind("bin,lo,hi,count\n", 0) == 0);
}

TEST_CASE("correlation report") {
  const std::vector<double> a{1.0, 2.0, 4.0, 8.0};
  const CorrelationReport self = correlation_report(a, a, "sas");
  CHECK(self.r == doctest::Approx(1.0));
  CHECK(self.n == 4);
  CHECK(self.scatter_csv.rfind("sas,sas\n", 0) == 0);
  const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
  CHECK_THROWS_AS(correlation_report(a, flat, "length"), DegenerateInputError);
}

TEST_CASE("synthetic protocols on the reference world") {
  const SyntheticWorld sw = fit_synthetic_decoder(GenConfig::reference());
  const auto rewrites = rewrite_pairs(sw, 500, 1);
  CHECK(selection_accuracy(rewrites, SelectionRule::kLowerWins).accuracy > 0.75);
  const auto rejects = reject_pairs(sw, 2000, 2);
  CHECK(std::abs(selection_accuracy(rejects, SelectionRule::kLowerWins).accuracy - 0.5) < 3.0 / std::sqrt(2000.0));

  const auto sets = bon_candidate_sets(sw, 200, 3);
  REQUIRE(sets.size() == 200);
  CHECK(sets[0].candidates.size() == 8);
  const BonComparison same = compare_best_of_n(sets, 0.0);
  CHECK(same.vanilla_artifact_mean == same.weighted_artifact_mean);
  const BonComparison cmp = compare_best_of_n(sets, 1.0);
  CHECK(cmp.weighted_sas_mean < cmp.vanilla_sas_mean);

  const IndependenceSample ind = artifact_independence_sample(sw, 300, 4, 3.0);
  CHECK(ind.sas.size() == 300);
  for (double c : ind.corruption) CHECK((c >= 0.0 && c <= 3.0));
}
