#pragma once

// Evaluation protocols: pairwise selection accuracy, Best-of-N selection,
// histograms and SAS-vs-covariate correlation reports.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "carp/numkit.hpp"

namespace carp {

enum class Preferred { kA, kB };
enum class SelectionRule { kLowerWins, kHigherWins };

std::string to_string(Preferred p);
Preferred preferred_from_string(const std::string& s);
std::string to_string(SelectionRule r);
SelectionRule selection_rule_from_string(const std::string& s);

struct EvalPair {
  std::string pair_id;
  double score_a = 0.0;
  double score_b = 0.0;
  Preferred label = Preferred::kA;
  std::string domain_tag;
};

struct DomainAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct AccuracyReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::map<std::string, DomainAccuracy> per_domain;
};

/// Fraction of pairs where the labeled item wins under `rule`; exact ties
/// count as incorrect.
AccuracyReport selection_accuracy(std::span<const EvalPair> pairs, SelectionRule rule);

struct BonCandidate {
  std::string response_id;
  double reward = 0.0;
  double sas = 0.0;
  std::optional<double> artifact_magnitude;
};

struct BonCandidateSet {
  std::string prompt_id;
  std::vector<BonCandidate> candidates;
};

/// Index of argmax (reward − sas_weight·sas); ties go to the lowest
/// response_id (lexicographic).
std::size_t best_of_n_index(const BonCandidateSet& set, double sas_weight);
const std::string& best_of_n(const BonCandidateSet& set, double sas_weight);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::size_t total() const;
  std::string to_csv() const;
};

/// Equal-width bins over [min, max]; the maximum lands in the last bin.
Histogram distribution_report(std::span<const double> values, std::size_t bins);

struct CorrelationReport {
  std::string covariate_name;
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  std::string scatter_csv;  // header "sas,<covariate_name>"
};

CorrelationReport correlation_report(std::span<const double> sas_values, std::span<const double> covariate,
                                     const std::string& covariate_name);

}  // namespace carp
