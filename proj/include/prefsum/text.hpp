#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace prefsum {

// Lowercased word tokens. Tokenization is deterministic and pure.
struct TokenSeq {
  std::vector<std::string> tokens;
  size_t source_len_chars = 0;

  size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::string joined() const;
};

enum class TokenizerMode {
  // Lowercase; punctuation becomes a separator except hyphens and
  // apostrophes between alphanumerics ("state-of-the-art" stays whole).
  kWords,
  // Runs of ASCII alphanumerics only; hyphens and apostrophes split.
  // Matches the tokenization used by common ROUGE tooling.
  kAlnum,
};

struct TokenizerOptions {
  TokenizerMode mode = TokenizerMode::kWords;
  bool stem = false;  // Porter stemmer, applied per token
};

TokenSeq normalize_tokenize(const std::string& text,
                            const TokenizerOptions& opts = {});

// Character spans into the source text. Spans partition [0, source length),
// so concatenating the sentence slices reconstructs the source exactly.
struct SentenceSpan {
  size_t begin = 0;
  size_t end = 0;
};

struct SentenceSplit {
  std::vector<std::string> sentences;
  std::vector<SentenceSpan> offsets;

  size_t size() const { return sentences.size(); }
};

// Rule-based splitter: breaks after {. ! ?} followed by whitespace and an
// uppercase letter, quote, or digit; a built-in abbreviation list suppresses
// false splits ("Dr.", "e.g.").
SentenceSplit split_sentences(const std::string& text);

// All contiguous n-token windows with multiplicity, each joined with '\x1f'.
std::vector<std::string> ngrams(const TokenSeq& seq, size_t n);

std::unordered_map<std::string, int> ngram_counts(const TokenSeq& seq, size_t n);

// Classic Porter (1980) stemmer over a lowercase ASCII word.
std::string porter_stem(const std::string& word);

bool is_stopword(const std::string& token);

}  // namespace prefsum
