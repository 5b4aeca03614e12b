#include "refgame/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace refgame {

const std::vector<std::string>& color_terms() {
  static const std::vector<std::string> kColors = {
      "red",  "orange",  "yellow", "green", "blue",  "indigo",
      "violet", "purple", "cyan",  "magenta", "pink", "brown",
      "black", "white",  "gray",   "grey"};
  return kColors;
}

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> kNames = {
      "t-shirt", "trouser", "pullover", "dress",   "coat",
      "sandal",  "shirt",   "sneaker",  "bag",     "ankle boot"};
  return kNames;
}

const std::vector<std::vector<std::string>>& synonym_table() {
  static const std::vector<std::vector<std::string>> kTable = {
      {"t-shirt", "top", "t-shirts", "shirt", "shirts"},
      {"trouser", "trousers", "pants"},
      {"pullover", "sweater", "hoodie", "sweaters", "hoodies"},
      {"dress", "dresses"},
      {"coat", "coats", "jacket", "jackets"},
      {"sandal", "high heels", "heels", "shoe", "shoes"},
      {"shirt", "shirts"},
      {"sneaker", "sneakers", "shoe", "shoes", "running shoe"},
      {"bag", "purse", "backpack", "bags", "purses"},
      {"ankle boot", "boot", "shoe", "shoes", "boots"}};
  return kTable;
}

const std::vector<std::string>& all_keywords() {
  static const std::vector<std::string> kAll = [] {
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (const auto& row : synonym_table()) {
      for (const auto& kw : row) {
        if (seen.insert(kw).second) out.push_back(kw);
      }
    }
    return out;
  }();
  return kAll;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>"};
  for (const auto& c : color_terms()) tokens_.push_back(c);
  for (const auto& kw : all_keywords()) tokens_.push_back(kw);
  tokens_.push_back("bottom left");
  tokens_.push_back("top right");
  for (const char* w : {"a", "an", "the", "and", "in", "of", "image",
                        "picture", "is"}) {
    tokens_.push_back(w);
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::logic_error("vocabulary: duplicate token " + tokens_[i]);
    }
  }
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary v;
  return v;
}

int Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  const std::vector<std::string> words = split_words(text);
  std::vector<int> ids;
  size_t i = 0;
  while (i < words.size()) {
    // Longest phrase first: vocabulary phrases span at most two words.
    if (i + 1 < words.size()) {
      const int two = find(words[i] + " " + words[i + 1]);
      if (two >= 0) {
        ids.push_back(two);
        i += 2;
        continue;
      }
    }
    const int one = find(words[i]);
    if (one < 0) {
      throw std::invalid_argument("tokenize: out-of-vocabulary word \"" +
                                  words[i] + "\"");
    }
    ids.push_back(one);
    ++i;
  }
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == eos()) break;
    if (id == pad() || id == bos()) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

Caption Vocabulary::make_caption(std::vector<int> ids) const {
  Caption c;
  c.text = detokenize(ids);
  c.ids = std::move(ids);
  return c;
}

const std::vector<std::pair<std::string, double>>& hue_table() {
  static const std::vector<std::pair<std::string, double>> kTable = {
      {"red", 0.0 / 360},    {"orange", 30.0 / 360}, {"yellow", 60.0 / 360},
      {"green", 120.0 / 360}, {"cyan", 180.0 / 360},  {"blue", 240.0 / 360},
      {"purple", 270.0 / 360}, {"pink", 300.0 / 360}};
  return kTable;
}

namespace {

// Hue-wheel positions for the color terms that denote a hue. Achromatic and
// low-value terms (black, white, gray/grey, brown) are excluded from
// nearest-hue mapping since saturated full-value colorization never
// produces them.
const std::vector<std::pair<std::string, double>>& extended_hue_points() {
  static const std::vector<std::pair<std::string, double>> kPoints = {
      {"red", 0.0 / 360},     {"orange", 30.0 / 360}, {"yellow", 60.0 / 360},
      {"green", 120.0 / 360}, {"cyan", 180.0 / 360},  {"blue", 240.0 / 360},
      {"indigo", 255.0 / 360}, {"purple", 270.0 / 360},
      {"violet", 285.0 / 360}, {"pink", 300.0 / 360},
      {"magenta", 315.0 / 360}};
  return kPoints;
}

double circular_distance(double a, double b) {
  double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

}  // namespace

std::string color_name_for_hue(double hue) {
  for (const auto& [name, h] : hue_table()) {
    if (circular_distance(hue, h) < 0.5 / 360.0) return name;
  }
  std::string best;
  double best_d = 2.0;
  for (const auto& [name, h] : extended_hue_points()) {
    const double d = circular_distance(hue, h);
    if (d < best_d) {
      best_d = d;
      best = name;
    }
  }
  return best;
}

std::string ground_truth_caption(int label, double hue) {
  return color_name_for_hue(hue) + " " + category_names().at(label);
}

std::string ground_truth_caption_tiled(int label_bl, double hue_bl,
                                       int label_tr, double hue_tr) {
  return color_name_for_hue(hue_bl) + " " + category_names().at(label_bl) +
         " in the bottom left and " + color_name_for_hue(hue_tr) + " " +
         category_names().at(label_tr) + " in the top right";
}

}  // namespace refgame
