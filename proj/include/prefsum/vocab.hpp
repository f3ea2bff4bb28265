#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "prefsum/jsonl.hpp"
#include "prefsum/text.hpp"

namespace prefsum {

// Word-level vocabulary with fixed special ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  // Most frequent tokens first (ties by token string), capped at max_size.
  static Vocab build(const std::vector<std::string>& texts, size_t max_size,
                     const TokenizerOptions& tok = {});

  size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  std::vector<int> encode(const TokenSeq& seq, size_t max_len = 0) const;
  std::vector<int> encode_text(const std::string& text, size_t max_len = 0,
                               const TokenizerOptions& tok = {}) const;
  // Joins tokens with spaces, skipping special ids.
  std::string decode_text(const std::vector<int>& ids) const;

  Json to_json() const;
  static Vocab from_json(const Json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace prefsum
