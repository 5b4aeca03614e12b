#pragma once

#include <map>
#include <string>
#include <vector>

#include "refgame/vocab.hpp"

namespace refgame {

enum class Region { kWhole, kBottomLeft, kTopRight };

// Word-boundary containment; `term` may be a multi-word phrase.
bool caption_contains(const std::string& caption_text, const std::string& term);

// Fraction of captions containing at least one of the 16 color terms.
double color_prevalence(const std::vector<std::string>& captions);

// Trace of the population covariance of per-caption TF-IDF vectors over the
// color terms. tf = raw in-caption count, idf = ln(N/df); terms absent from
// the whole corpus contribute 0.
double color_diversity(const std::vector<std::string>& captions);

// Fraction of captions containing any clothing keyword.
double keyword_prevalence(const std::vector<std::string>& captions);

// Fraction of captions naming the ground-truth label of the given region.
double object_prevalence(const std::vector<std::string>& captions,
                         const std::vector<int>& labels, Region region);

// Add-k smoothed n-gram reference model for structural drift scoring.
class NGramLM {
 public:
  explicit NGramLM(int order = 3, double add_k = 0.1);

  void fit(const std::vector<std::vector<int>>& token_sequences);
  // Log-likelihood of a token sequence (EOS included), always finite.
  double sequence_log_likelihood(const std::vector<int>& ids) const;

  int order() const { return order_; }

 private:
  double token_log_prob(const std::vector<int>& context, int token) const;

  int order_;
  double add_k_;
  int vocab_size_;
  std::map<std::vector<int>, std::map<int, int>> counts_;
  std::map<std::vector<int>, int> context_totals_;
};

struct DriftScore {
  double mean_full = 0.0;       // mean full-caption log-likelihood
  double mean_per_token = 0.0;  // mean per-token log-likelihood
};

DriftScore drift_score(const std::vector<Caption>& captions, const NGramLM& ref);

// Evaluation report with stable JSON field names.
struct MetricsReport {
  double accuracy_1 = 0.0;
  double accuracy_2 = 0.0;
  double accuracy_difference = 0.0;
  double score_difference = 0.0;
  double chance_accuracy = 0.0;
  double color_prevalence = 0.0;
  double color_diversity = 0.0;
  double keyword_prevalence = 0.0;
  double object_prevalence_whole = 0.0;
  double object_prevalence_bl = 0.0;
  double object_prevalence_tr = 0.0;
  double drift_full = 0.0;
  double drift_per_token = 0.0;
  double mean_reward = 0.0;
  double mean_caption_words = 0.0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& json);
};

}  // namespace refgame
