#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <unordered_map>
#include <vector>

namespace latgeo {

// Whitespace tokenizer; ASCII-lowercases so caption text and grammar words
// compare consistently everywhere (metrics, vocabulary, decoding).
std::vector<std::string> tokenize(const std::string& text);

// Caption vocabulary with four reserved ids. Words whose corpus count is
// strictly greater than min_count get their own id in first-appearance order;
// everything else encodes to UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;

  static Vocabulary build(const std::vector<std::string>& captions, int min_count = 5);

  int size() const { return static_cast<int>(words_.size()); }
  bool contains(const std::string& w) const { return ids_.count(w) > 0; }
  int encode_word(const std::string& w) const;
  const std::string& word(int id) const;
  int count(const std::string& w) const;  // corpus frequency; 0 if never seen

  // START + word ids + END. Captions longer than max_len - 2 words truncate;
  // max_len <= 0 means unlimited.
  std::vector<int> encode(const std::string& caption, int max_len) const;
  // Words strictly between START and the first END, joined by single spaces.
  std::string decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::unordered_map<std::string, int> counts_;
};

}  // namespace latgeo
