#include "carp/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace carp {

std::string to_string(Preferred p) { return p == Preferred::kA ? "a_preferred" : "b_preferred"; }

Preferred preferred_from_string(const std::string& s) {
  if (s == "a_preferred" || s == "a") return Preferred::kA;
  if (s == "b_preferred" || s == "b") return Preferred::kB;
  throw ConfigError("unknown label '" + s + "' (expected a_preferred or b_preferred)");
}

std::string to_string(SelectionRule r) { return r == SelectionRule::kLowerWins ? "lower_wins" : "higher_wins"; }

SelectionRule selection_rule_from_string(const std::string& s) {
  if (s == "lower_wins") return SelectionRule::kLowerWins;
  if (s == "higher_wins") return SelectionRule::kHigherWins;
  throw ConfigError("unknown selection rule '" + s + "' (expected lower_wins or higher_wins)");
}

AccuracyReport selection_accuracy(std::span<const EvalPair> pairs, SelectionRule rule) {
  if (pairs.empty()) throw DegenerateInputError("selection_accuracy: no pairs");
  AccuracyReport report;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.score_a) || !std::isfinite(p.score_b))
      throw DegenerateInputError("selection_accuracy: non-finite score in pair '" + p.pair_id + "'");
    const double preferred = p.label == Preferred::kA ? p.score_a : p.score_b;
    const double other = p.label == Preferred::kA ? p.score_b : p.score_a;
    const bool correct = rule == SelectionRule::kLowerWins ? preferred < other : preferred > other;
    auto& dom = report.per_domain[p.domain_tag];
    ++dom.total;
    ++report.total;
    if (correct) {
      ++dom.correct;
      ++report.correct;
    }
  }
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

std::size_t best_of_n_index(const BonCandidateSet& set, double sas_weight) {
  if (set.candidates.empty()) throw DegenerateInputError("best_of_n: empty candidate set '" + set.prompt_id + "'");
  std::size_t best = 0;
  double best_score = set.candidates[0].reward - sas_weight * set.candidates[0].sas;
  for (std::size_t i = 1; i < set.candidates.size(); ++i) {
    const auto& c = set.candidates[i];
    const double score = c.reward - sas_weight * c.sas;
    if (score > best_score || (score == best_score && c.response_id < set.candidates[best].response_id)) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

const std::string& best_of_n(const BonCandidateSet& set, double sas_weight) {
  return set.candidates[best_of_n_index(set, sas_weight)].response_id;
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::string Histogram::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "bin,lo,hi,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i)
    out << i << ',' << edges[i] << ',' << edges[i + 1] << ',' << counts[i] << '\n';
  return out.str();
}

Histogram distribution_report(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw DegenerateInputError("distribution_report: empty input");
  if (bins < 1) throw DegenerateInputError("distribution_report: bins must be >= 1");
  if (!all_finite(values)) throw DegenerateInputError("distribution_report: non-finite value");
  Histogram h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = h.lo + width * static_cast<double>(i);
  h.edges[bins] = h.hi;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = static_cast<std::size_t>((v - h.lo) / width);
      b = std::min(b, bins - 1);
      // Settle rounding at the edges: bin b holds edges[b] <= v < edges[b+1].
      while (b > 0 && v < h.edges[b]) --b;
      while (b + 1 < bins && v >= h.edges[b + 1]) ++b;
    }
    ++h.counts[b];
  }
  return h;
}

CorrelationReport correlation_report(std::span<const double> sas_values, std::span<const double> covariate,
                                     const std::string& covariate_name) {
  const PearsonResult pr = pearson(sas_values, covariate);
  CorrelationReport rep;
  rep.covariate_name = covariate_name;
  rep.r = pr.r;
  rep.p = pr.p;
  rep.n = sas_values.size();
  std::ostringstream out;
  out << std::setprecision(17);
  out << "sas," << covariate_name << '\n';
  for (std::size_t i = 0; i < sas_values.size(); ++i) out << sas_values[i] << ',' << covariate[i] << '\n';
  rep.scatter_csv = out.str();
  return rep;
}

}  // namespace carp
