#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prefsum/jsonl.hpp"
#include "prefsum/metrics.hpp"

namespace prefsum {

struct ExampleRecord {
  std::string id;
  std::string article;
  std::optional<std::string> summary;
  std::optional<std::string> domain;
  std::optional<PreferenceVector> preference;

  bool annotated() const { return summary.has_value() && !summary->empty(); }
};

struct Corpus {
  std::string id;
  std::vector<ExampleRecord> records;

  size_t size() const { return records.size(); }
  const ExampleRecord* find(const std::string& record_id) const;
};

Corpus load_corpus(const std::string& path);
Corpus load_corpus(const std::string& path, const std::string& corpus_id);
void save_corpus(const std::string& path, const Corpus& corpus);

Json example_to_json(const ExampleRecord& r);
ExampleRecord example_from_json(const Json& j, const std::string& where);

// A self-supervised pair: one sentence lifted out of its article.
struct SslPair {
  std::string pseudo_article;  // source article with the sentence removed
  std::string pseudo_summary;  // the removed sentence
  std::string source_id;
  size_t sentence_index = 0;
  size_t char_offset = 0;  // where the sentence was cut, for reconstruction
  PreferenceVector preference;
};

struct SslBuildStats {
  size_t articles = 0;
  size_t short_articles = 0;  // fewer than 2 sentences, contributed nothing
  size_t filtered_zero_rouge = 0;
  size_t pairs = 0;
};

// One pair per sentence per article with >= 2 sentences; pairs whose pseudo
// article/summary share no unigram (zero ROUGE-1) are dropped. Each retained
// pair carries its preference vector.
std::vector<SslPair> build_ssl_dataset(const Corpus& corpus,
                                       const MetricOptions& opts = {},
                                       SslBuildStats* stats = nullptr);

std::vector<SslPair> load_ssl_dataset(const std::string& path);
void save_ssl_dataset(const std::string& path, const std::vector<SslPair>& pairs);

// Cosine of corpus-level token-frequency vectors built from article texts.
double token_cosine_similarity(const Corpus& a, const Corpus& b,
                               const TokenizerOptions& tok = {});

// Mean ROUGE-1 precision of summary-vs-article over a seeded sample of the
// corpus's annotated pairs; sample_n larger than the corpus uses it whole.
double corpus_rouge_precision(const Corpus& source, size_t sample_n, uint64_t seed,
                              const TokenizerOptions& tok = {});

// Mean ROUGE-1 recall counterpart, exposed as a diagnostic only.
double corpus_rouge_recall(const Corpus& source, size_t sample_n, uint64_t seed,
                           const TokenizerOptions& tok = {});

double mean_article_length(const Corpus& corpus, size_t sample_n, uint64_t seed,
                           const TokenizerOptions& tok = {});

struct CorpusScore {
  std::string corpus_id;
  int cosine_rank = 0;
  int rouge_precision_rank = 0;
  int length_rank = 0;
  double avg_rank = 0.0;
  bool selected = false;
  // Raw statistics behind the ranks.
  double cosine = 0.0;
  double rouge_precision = 0.0;
  double length_delta = 0.0;
};

// Ranks candidates by (a) descending cosine similarity to the target,
// (b) descending corpus ROUGE precision, (c) ascending distance between mean
// article lengths; sorts by the mean of the three 1-based ranks, ties broken
// by corpus id. The first `top` entries are marked selected.
std::vector<CorpusScore> rank_corpora(const Corpus& target,
                                      const std::vector<Corpus>& candidates,
                                      size_t top, size_t sample_n = 200,
                                      uint64_t seed = 0,
                                      const TokenizerOptions& tok = {});

struct MetaTask {
  std::string source_corpus;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// n_tasks must be divisible by |sources|; each task draws 2k distinct
// examples (without replacement within the task) from one source corpus.
std::vector<MetaTask> sample_meta_tasks(const std::vector<Corpus>& sources, size_t k,
                                        size_t n_tasks, uint64_t seed);

std::vector<MetaTask> load_meta_tasks(const std::string& path);
void save_meta_tasks(const std::string& path, const std::vector<MetaTask>& tasks);

}  // namespace prefsum
