#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "prefsum/text.hpp"

namespace prefsum {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Multiset n-gram overlap, n in {1, 2}. All components 0 when either side
// has no n-grams.
RougeScore rouge_n(const TokenSeq& reference, const TokenSeq& hypothesis, int n);

// Longest common subsequence by dynamic programming.
RougeScore rouge_l(const TokenSeq& reference, const TokenSeq& hypothesis);

// One greedily matched extractive fragment: summary tokens
// [summary_pos, summary_pos + length) == article tokens
// [article_pos, article_pos + length).
struct Fragment {
  size_t summary_pos = 0;
  size_t article_pos = 0;
  size_t length = 0;
};

struct FragmentSet {
  std::vector<Fragment> fragments;

  size_t covered_tokens() const;
  double squared_length_sum() const;
};

// Greedy left-to-right scan of the summary; at each position takes the
// longest article match, ties broken by earliest article start. Tokens with
// no article match are skipped.
FragmentSet extractive_fragments(const TokenSeq& article, const TokenSeq& summary);

// coverage = sum |f| / summary_len, density = sum |f|^2 / summary_len.
// Throws std::invalid_argument("empty summary") when summary_len == 0.
std::pair<double, double> coverage_density(const FragmentSet& frags, size_t summary_len);

// Fraction of summary token occurrences whose type never appears in the
// article. With ignore_stopwords, function words are excluded from the
// numerator (the convention used by some published corpus statistics).
double novel_word_ratio(const TokenSeq& article, const TokenSeq& summary,
                        bool ignore_stopwords = false);

// |summary| / |article|. Throws std::invalid_argument("empty article").
double compression_ratio(const TokenSeq& article, const TokenSeq& summary);

// The 7-dimensional statistic vector conditioning generation. Serialized in
// the order ROUGE-1, ROUGE-2, ROUGE-L, compression ratio, extractive
// coverage, extractive density, novel word ratio.
struct PreferenceVector {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double compression = 0.0;
  double coverage = 0.0;
  double density = 0.0;
  double novel_ratio = 0.0;

  static constexpr size_t kDim = 7;
  std::array<double, kDim> as_array() const;
  static PreferenceVector from_array(const std::array<double, kDim>& a);
  static PreferenceVector from_vector(const std::vector<double>& v);
  std::vector<double> as_vector() const;
};

struct MetricOptions {
  TokenizerOptions tokenizer;
  bool novel_ignore_stopwords = false;
};

// ROUGE components use F1. Both sequences must be non-empty.
PreferenceVector preference_vector(const TokenSeq& article, const TokenSeq& summary,
                                   bool novel_ignore_stopwords = false);

PreferenceVector preference_vector_text(const std::string& article,
                                        const std::string& summary,
                                        const MetricOptions& opts = {});

// Corpus-level mean of per-pair F1 x 100, rounded to two decimals.
struct EvalReport {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  size_t n_pairs = 0;
  std::vector<std::array<double, 3>> per_pair;  // optional breakdown
};

EvalReport eval_report(const std::vector<std::pair<std::string, std::string>>& hyp,
                       const std::vector<std::pair<std::string, std::string>>& ref,
                       const MetricOptions& opts, bool per_pair = false);

double round2(double v);
double round4(double v);

}  // namespace prefsum
