#include "latgeo/vocab.hpp"

#include <nlohmann/json.hpp>

#include "latgeo/error.hpp"

namespace latgeo {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch >= 'A' && ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a') : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : words_{"<pad>", "<start>", "<end>", "<unk>"} {}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions, int min_count) {
  Vocabulary v;
  std::vector<std::string> order;  // first-appearance order
  for (const auto& cap : captions) {
    for (auto& w : tokenize(cap)) {
      auto [it, fresh] = v.counts_.try_emplace(w, 0);
      if (fresh) order.push_back(w);
      ++it->second;
    }
  }
  for (const auto& w : order) {
    if (v.counts_[w] > min_count) {  // strictly greater: count == min_count is UNK
      v.ids_.emplace(w, static_cast<int>(v.words_.size()));
      v.words_.push_back(w);
    }
  }
  return v;
}

int Vocabulary::encode_word(const std::string& w) const {
  auto it = ids_.find(w);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary: id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return words_[static_cast<std::size_t>(id)];
}

int Vocabulary::count(const std::string& w) const {
  auto it = counts_.find(w);
  return it == counts_.end() ? 0 : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& caption, int max_len) const {
  auto toks = tokenize(caption);
  if (max_len > 0 && static_cast<int>(toks.size()) > max_len - 2) {
    toks.resize(static_cast<std::size_t>(max_len - 2));
  }
  std::vector<int> out;
  out.reserve(toks.size() + 2);
  out.push_back(kStart);
  for (const auto& w : toks) out.push_back(encode_word(w));
  out.push_back(kEnd);
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kStart || id == kPad) continue;
    if (id == kEnd) break;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["words"] = std::vector<std::string>(words_.begin() + 4, words_.end());
  j["counts"] = counts_;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  for (const auto& w : j.at("words")) {
    const std::string word = w.get<std::string>();
    v.ids_.emplace(word, static_cast<int>(v.words_.size()));
    v.words_.push_back(word);
  }
  v.counts_ = j.at("counts").get<std::unordered_map<std::string, int>>();
  return v;
}

}  // namespace latgeo
