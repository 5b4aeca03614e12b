#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace refgame {

constexpr int kMaxCaptionTokens = 32;

// Token id sequence plus its text rendering. Sequences terminate at the
// first EOS; special tokens never appear in `text`.
struct Caption {
  std::vector<int> ids;
  std::string text;
};

// The 16 color terms used by every color metric.
const std::vector<std::string>& color_terms();

// Category name per FMNIST label (0..9).
const std::vector<std::string>& category_names();

// Label -> keyword set; every category name is in its own set. Multi-word
// keywords ("high heels", "ankle boot", "running shoe") are single entries.
const std::vector<std::vector<std::string>>& synonym_table();

// Union of all synonym sets.
const std::vector<std::string>& all_keywords();

// Closed word-level vocabulary. Multi-word phrases ("bottom left",
// "top right", "high heels", ...) are single tokens; tokenize() matches
// them greedily, longest first.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }

  const std::string& token(int id) const { return tokens_.at(id); }
  // -1 when absent.
  int find(const std::string& token) const;
  // Throws listing the offending word when text is out of vocabulary.
  std::vector<int> tokenize(const std::string& text) const;
  // Stops at the first EOS; skips PAD/BOS.
  std::string detokenize(const std::vector<int>& ids) const;

  Caption make_caption(std::vector<int> ids) const;

 private:
  Vocabulary();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Default 8-entry color-name -> hue table (fractions of a turn).
const std::vector<std::pair<std::string, double>>& hue_table();

// Table name for a table hue, otherwise the nearest hue-bearing color term.
std::string color_name_for_hue(double hue);

// Procedural ground-truth caption: "<color> <category>" for single-object
// images, the two-region template for tiled ones.
std::string ground_truth_caption(int label, double hue);
std::string ground_truth_caption_tiled(int label_bl, double hue_bl,
                                       int label_tr, double hue_tr);

// Lowercases and splits on whitespace.
std::vector<std::string> split_words(const std::string& text);

}  // namespace refgame
