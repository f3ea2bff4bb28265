#include "prefsum/vocab.hpp"

#include <algorithm>

namespace prefsum {

Vocab Vocab::build(const std::vector<std::string>& texts, size_t max_size,
                   const TokenizerOptions& tok) {
  if (max_size < 5) throw DataError("vocab size must be at least 5");
  std::unordered_map<std::string, size_t> counts;
  for (const auto& text : texts)
    for (const auto& t : normalize_tokenize(text, tok).tokens) ++counts[t];

  std::vector<std::pair<std::string, size_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& [token, count] : sorted) {
    if (v.tokens_.size() >= max_size) break;
    v.tokens_.push_back(token);
  }
  for (size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
    throw DataError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode(const TokenSeq& seq, size_t max_len) const {
  std::vector<int> out;
  out.reserve(seq.size());
  for (const auto& t : seq.tokens) {
    if (max_len && out.size() >= max_len) break;
    out.push_back(id(t));
  }
  return out;
}

std::vector<int> Vocab::encode_text(const std::string& text, size_t max_len,
                                    const TokenizerOptions& tok) const {
  return encode(normalize_tokenize(text, tok), max_len);
}

std::string Vocab::decode_text(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos || id == kUnk) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

Json Vocab::to_json() const {
  Json j;
  j["format_version"] = kFormatVersion;
  j["tokens"] = tokens_;
  return j;
}

Vocab Vocab::from_json(const Json& j) {
  Vocab v;
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  if (v.tokens_.size() < 4 || v.tokens_[kPad] != "<pad>" || v.tokens_[kBos] != "<bos>" ||
      v.tokens_[kEos] != "<eos>" || v.tokens_[kUnk] != "<unk>")
    throw DataError("vocab is missing the reserved special tokens");
  for (size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

}  // namespace prefsum
