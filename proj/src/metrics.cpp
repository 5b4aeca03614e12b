#include "refgame/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace refgame {

namespace {

std::vector<std::string> phrase_words(const std::string& term) {
  return split_words(term);
}

bool words_contain_phrase(const std::vector<std::string>& words,
                          const std::vector<std::string>& phrase) {
  if (phrase.empty() || words.size() < phrase.size()) return false;
  for (size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    bool ok = true;
    for (size_t j = 0; j < phrase.size(); ++j) {
      if (words[i + j] != phrase[j]) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  }
  return false;
}

int count_word(const std::vector<std::string>& words, const std::string& w) {
  int n = 0;
  for (const auto& x : words) {
    if (x == w) ++n;
  }
  return n;
}

void require_nonempty(const std::vector<std::string>& captions,
                      const char* what) {
  if (captions.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty caption list");
  }
}

}  // namespace

bool caption_contains(const std::string& caption_text,
                      const std::string& term) {
  return words_contain_phrase(split_words(caption_text), phrase_words(term));
}

double color_prevalence(const std::vector<std::string>& captions) {
  require_nonempty(captions, "color_prevalence");
  int hits = 0;
  for (const auto& c : captions) {
    const auto words = split_words(c);
    for (const auto& term : color_terms()) {
      if (count_word(words, term) > 0) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / captions.size();
}

double color_diversity(const std::vector<std::string>& captions) {
  require_nonempty(captions, "color_diversity");
  const auto& colors = color_terms();
  const size_t n = captions.size();
  const size_t d = colors.size();

  std::vector<std::vector<int>> tf(n, std::vector<int>(d, 0));
  std::vector<int> df(d, 0);
  for (size_t i = 0; i < n; ++i) {
    const auto words = split_words(captions[i]);
    for (size_t c = 0; c < d; ++c) {
      tf[i][c] = count_word(words, colors[c]);
      if (tf[i][c] > 0) ++df[c];
    }
  }
  // Trace of the population covariance of the tf-idf vectors.
  double trace = 0.0;
  for (size_t c = 0; c < d; ++c) {
    if (df[c] == 0) continue;
    const double idf = std::log(static_cast<double>(n) / df[c]);
    double sum = 0.0, sumsq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double v = tf[i][c] * idf;
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n;
    trace += sumsq / n - mean * mean;
  }
  return trace;
}

double keyword_prevalence(const std::vector<std::string>& captions) {
  require_nonempty(captions, "keyword_prevalence");
  static const std::vector<std::vector<std::string>> kPhrases = [] {
    std::vector<std::vector<std::string>> out;
    for (const auto& kw : all_keywords()) out.push_back(phrase_words(kw));
    return out;
  }();
  int hits = 0;
  for (const auto& c : captions) {
    const auto words = split_words(c);
    for (const auto& phrase : kPhrases) {
      if (words_contain_phrase(words, phrase)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / captions.size();
}

double object_prevalence(const std::vector<std::string>& captions,
                         const std::vector<int>& labels, Region) {
  require_nonempty(captions, "object_prevalence");
  if (captions.size() != labels.size()) {
    throw std::invalid_argument("object_prevalence: captions/labels mismatch");
  }
  const auto& table = synonym_table();
  int hits = 0;
  for (size_t i = 0; i < captions.size(); ++i) {
    const auto words = split_words(captions[i]);
    for (const auto& kw : table.at(labels[i])) {
      if (words_contain_phrase(words, phrase_words(kw))) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / captions.size();
}

NGramLM::NGramLM(int order, double add_k)
    : order_(order), add_k_(add_k),
      vocab_size_(Vocabulary::instance().size()) {}

void NGramLM::fit(const std::vector<std::vector<int>>& token_sequences) {
  const auto& vocab = Vocabulary::instance();
  counts_.clear();
  context_totals_.clear();
  for (const auto& seq : token_sequences) {
    std::vector<int> padded(order_ - 1, vocab.bos());
    padded.insert(padded.end(), seq.begin(), seq.end());
    if (padded.empty() || padded.back() != vocab.eos()) {
      padded.push_back(vocab.eos());
    }
    for (size_t i = order_ - 1; i < padded.size(); ++i) {
      std::vector<int> ctx(padded.begin() + (i - order_ + 1),
                           padded.begin() + i);
      ++counts_[ctx][padded[i]];
      ++context_totals_[ctx];
    }
  }
}

double NGramLM::token_log_prob(const std::vector<int>& context,
                               int token) const {
  int count = 0, total = 0;
  auto it = counts_.find(context);
  if (it != counts_.end()) {
    auto jt = it->second.find(token);
    if (jt != it->second.end()) count = jt->second;
    total = context_totals_.at(context);
  }
  return std::log((count + add_k_) / (total + add_k_ * vocab_size_));
}

double NGramLM::sequence_log_likelihood(const std::vector<int>& ids) const {
  const auto& vocab = Vocabulary::instance();
  std::vector<int> padded(order_ - 1, vocab.bos());
  padded.insert(padded.end(), ids.begin(), ids.end());
  if (padded.empty() || padded.back() != vocab.eos()) {
    padded.push_back(vocab.eos());
  }
  double ll = 0.0;
  for (size_t i = order_ - 1; i < padded.size(); ++i) {
    std::vector<int> ctx(padded.begin() + (i - order_ + 1), padded.begin() + i);
    ll += token_log_prob(ctx, padded[i]);
  }
  return ll;
}

DriftScore drift_score(const std::vector<Caption>& captions,
                       const NGramLM& ref) {
  DriftScore out;
  if (captions.empty()) return out;
  double full = 0.0, per_token = 0.0;
  for (const auto& c : captions) {
    std::vector<int> content;
    for (int id : c.ids) {
      if (id == Vocabulary::instance().eos()) break;
      if (id == Vocabulary::instance().bos() ||
          id == Vocabulary::instance().pad()) {
        continue;
      }
      content.push_back(id);
    }
    const double ll = ref.sequence_log_likelihood(content);
    full += ll;
    per_token += ll / (content.size() + 1);  // +1 for EOS
  }
  out.mean_full = full / captions.size();
  out.mean_per_token = per_token / captions.size();
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy_1"] = accuracy_1;
  j["accuracy_2"] = accuracy_2;
  j["accuracy_difference"] = accuracy_difference;
  j["score_difference"] = score_difference;
  j["chance_accuracy"] = chance_accuracy;
  j["color_prevalence"] = color_prevalence;
  j["color_diversity"] = color_diversity;
  j["keyword_prevalence"] = keyword_prevalence;
  j["object_prevalence_whole"] = object_prevalence_whole;
  j["object_prevalence_bl"] = object_prevalence_bl;
  j["object_prevalence_tr"] = object_prevalence_tr;
  j["drift_full"] = drift_full;
  j["drift_per_token"] = drift_per_token;
  j["mean_reward"] = mean_reward;
  j["mean_caption_words"] = mean_caption_words;
  return j.dump();
}

MetricsReport MetricsReport::from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  MetricsReport r;
  r.accuracy_1 = j.at("accuracy_1");
  r.accuracy_2 = j.at("accuracy_2");
  r.accuracy_difference = j.at("accuracy_difference");
  r.score_difference = j.at("score_difference");
  r.chance_accuracy = j.at("chance_accuracy");
  r.color_prevalence = j.at("color_prevalence");
  r.color_diversity = j.at("color_diversity");
  r.keyword_prevalence = j.at("keyword_prevalence");
  r.object_prevalence_whole = j.at("object_prevalence_whole");
  r.object_prevalence_bl = j.at("object_prevalence_bl");
  r.object_prevalence_tr = j.at("object_prevalence_tr");
  r.drift_full = j.at("drift_full");
  r.drift_per_token = j.at("drift_per_token");
  r.mean_reward = j.at("mean_reward");
  r.mean_caption_words = j.at("mean_caption_words");
  return r;
}

}  // namespace refgame
