#include "prefsum/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "prefsum/rng.hpp"

namespace prefsum {

const ExampleRecord* Corpus::find(const std::string& record_id) const {
  for (const auto& r : records)
    if (r.id == record_id) return &r;
  return nullptr;
}

Json example_to_json(const ExampleRecord& r) {
  Json j;
  j["format_version"] = kFormatVersion;
  j["id"] = r.id;
  j["article"] = r.article;
  if (r.summary) j["summary"] = *r.summary;
  if (r.domain) j["domain"] = *r.domain;
  if (r.preference) j["preference"] = r.preference->as_vector();
  return j;
}

ExampleRecord example_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": record is not an object");
  ExampleRecord r;
  if (!j.contains("id") || !j["id"].is_string())
    throw DataError(where + ": missing string field 'id'");
  if (!j.contains("article") || !j["article"].is_string())
    throw DataError(where + ": missing string field 'article'");
  r.id = j["id"].get<std::string>();
  r.article = j["article"].get<std::string>();
  if (r.article.empty()) throw DataError(where + ": empty article");
  if (j.contains("summary") && !j["summary"].is_null())
    r.summary = j["summary"].get<std::string>();
  if (j.contains("domain") && !j["domain"].is_null())
    r.domain = j["domain"].get<std::string>();
  if (j.contains("preference") && !j["preference"].is_null())
    r.preference = PreferenceVector::from_vector(j["preference"].get<std::vector<double>>());
  return r;
}

Corpus load_corpus(const std::string& path) {
  return load_corpus(path, std::filesystem::path(path).stem().string());
}

Corpus load_corpus(const std::string& path, const std::string& corpus_id) {
  Corpus corpus;
  corpus.id = corpus_id;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](size_t lineno, const Json& j) {
    const std::string where = path + ": line " + std::to_string(lineno);
    ExampleRecord r = example_from_json(j, where);
    if (!seen.insert(r.id).second)
      throw DataError(where + ": duplicate record id '" + r.id + "'");
    corpus.records.push_back(std::move(r));
  });
  return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::vector<Json> lines;
  lines.reserve(corpus.records.size());
  for (const auto& r : corpus.records) lines.push_back(example_to_json(r));
  write_jsonl(path, lines);
}

std::vector<SslPair> build_ssl_dataset(const Corpus& corpus, const MetricOptions& opts,
                                       SslBuildStats* stats) {
  SslBuildStats local;
  std::vector<SslPair> out;
  for (const auto& record : corpus.records) {
    ++local.articles;
    const SentenceSplit split = split_sentences(record.article);
    if (split.size() < 2) {
      ++local.short_articles;
      continue;
    }
    for (size_t j = 0; j < split.size(); ++j) {
      const auto& span = split.offsets[j];
      SslPair pair;
      pair.pseudo_summary = split.sentences[j];
      pair.pseudo_article =
          record.article.substr(0, span.begin) + record.article.substr(span.end);
      pair.source_id = record.id;
      pair.sentence_index = j;
      pair.char_offset = span.begin;

      const TokenSeq art = normalize_tokenize(pair.pseudo_article, opts.tokenizer);
      const TokenSeq sum = normalize_tokenize(pair.pseudo_summary, opts.tokenizer);
      if (art.empty() || sum.empty() || rouge_n(art, sum, 1).f1 <= 0.0) {
        ++local.filtered_zero_rouge;
        continue;
      }
      pair.preference = preference_vector(art, sum, opts.novel_ignore_stopwords);
      out.push_back(std::move(pair));
    }
  }
  local.pairs = out.size();
  if (stats) *stats = local;
  return out;
}

std::vector<SslPair> load_ssl_dataset(const std::string& path) {
  std::vector<SslPair> out;
  for_each_jsonl(path, [&](size_t lineno, const Json& j) {
    const std::string where = path + ": line " + std::to_string(lineno);
    for (const char* field : {"pseudo_article", "pseudo_summary", "source_id",
                              "sentence_index", "preference"}) {
      if (!j.contains(field)) throw DataError(where + ": missing field '" + field + "'");
    }
    SslPair p;
    p.pseudo_article = j["pseudo_article"].get<std::string>();
    p.pseudo_summary = j["pseudo_summary"].get<std::string>();
    p.source_id = j["source_id"].get<std::string>();
    p.sentence_index = j["sentence_index"].get<size_t>();
    p.char_offset = j.value("char_offset", size_t{0});
    p.preference = PreferenceVector::from_vector(j["preference"].get<std::vector<double>>());
    out.push_back(std::move(p));
  });
  return out;
}

void save_ssl_dataset(const std::string& path, const std::vector<SslPair>& pairs) {
  std::vector<Json> lines;
  lines.reserve(pairs.size());
  for (const auto& p : pairs) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["pseudo_article"] = p.pseudo_article;
    j["pseudo_summary"] = p.pseudo_summary;
    j["source_id"] = p.source_id;
    j["sentence_index"] = p.sentence_index;
    j["char_offset"] = p.char_offset;
    j["preference"] = p.preference.as_vector();
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

namespace {

// Seeded sample of record indices; the whole corpus when sample_n >= size.
std::vector<size_t> sample_record_indices(const Corpus& corpus, size_t sample_n,
                                          uint64_t seed) {
  const size_t n = corpus.size();
  if (sample_n >= n) {
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  Rng rng(derive_seed(seed, "corpus-sample:" + corpus.id));
  auto idx = rng.sample_indices(n, sample_n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double token_cosine_similarity(const Corpus& a, const Corpus& b,
                               const TokenizerOptions& tok) {
  if (a.records.empty() || b.records.empty())
    throw DataError("token_cosine_similarity: empty corpus");
  auto tf = [&](const Corpus& c) {
    std::unordered_map<std::string, double> freq;
    for (const auto& r : c.records)
      for (const auto& t : normalize_tokenize(r.article, tok).tokens) ++freq[t];
    return freq;
  };
  const auto fa = tf(a);
  const auto fb = tf(b);
  if (fa.empty() || fb.empty()) throw DataError("token_cosine_similarity: empty vocabulary");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : fa) {
    na += v * v;
    const auto it = fb.find(t);
    if (it != fb.end()) dot += v * it->second;
  }
  for (const auto& [t, v] : fb) nb += v * v;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

double corpus_rouge_stat(const Corpus& source, size_t sample_n, uint64_t seed,
                         const TokenizerOptions& tok, bool precision_side) {
  std::vector<size_t> annotated;
  for (size_t i = 0; i < source.size(); ++i)
    if (source.records[i].annotated()) annotated.push_back(i);
  if (annotated.empty())
    throw DataError("corpus '" + source.id + "' has no summaries");

  Corpus view;
  view.id = source.id;
  for (size_t i : annotated) view.records.push_back(source.records[i]);
  const auto idx = sample_record_indices(view, sample_n, seed);

  double total = 0.0;
  size_t used = 0;
  for (size_t i : idx) {
    const auto& r = view.records[i];
    const TokenSeq art = normalize_tokenize(r.article, tok);
    const TokenSeq sum = normalize_tokenize(*r.summary, tok);
    if (art.empty() || sum.empty()) continue;
    const RougeScore s = rouge_n(art, sum, 1);
    total += precision_side ? s.precision : s.recall;
    ++used;
  }
  if (used == 0) throw DataError("corpus '" + source.id + "' has no usable pairs");
  return total / static_cast<double>(used);
}

}  // namespace

double corpus_rouge_precision(const Corpus& source, size_t sample_n, uint64_t seed,
                              const TokenizerOptions& tok) {
  return corpus_rouge_stat(source, sample_n, seed, tok, true);
}

double corpus_rouge_recall(const Corpus& source, size_t sample_n, uint64_t seed,
                           const TokenizerOptions& tok) {
  return corpus_rouge_stat(source, sample_n, seed, tok, false);
}

double mean_article_length(const Corpus& corpus, size_t sample_n, uint64_t seed,
                           const TokenizerOptions& tok) {
  if (corpus.records.empty()) throw DataError("mean_article_length: empty corpus");
  const auto idx = sample_record_indices(corpus, sample_n, seed);
  double total = 0.0;
  for (size_t i : idx)
    total += static_cast<double>(normalize_tokenize(corpus.records[i].article, tok).size());
  return total / static_cast<double>(idx.size());
}

std::vector<CorpusScore> rank_corpora(const Corpus& target,
                                      const std::vector<Corpus>& candidates,
                                      size_t top, size_t sample_n, uint64_t seed,
                                      const TokenizerOptions& tok) {
  if (candidates.empty()) throw DataError("rank_corpora: no candidates");
  if (top > candidates.size())
    throw DataError("rank_corpora: top exceeds candidate count");
  {
    std::set<std::string> ids;
    for (const auto& c : candidates) {
      if (!ids.insert(c.id).second)
        throw DataError("rank_corpora: duplicate corpus id '" + c.id + "'");
    }
  }

  const double target_len = mean_article_length(target, sample_n, seed, tok);
  std::vector<CorpusScore> scores(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    scores[i].corpus_id = candidates[i].id;
    scores[i].cosine = token_cosine_similarity(target, candidates[i], tok);
    scores[i].rouge_precision = corpus_rouge_precision(candidates[i], sample_n, seed, tok);
    scores[i].length_delta =
        std::abs(mean_article_length(candidates[i], sample_n, seed, tok) - target_len);
  }

  // 1-based ordinal ranks per criterion, ties broken by corpus id.
  auto assign_ranks = [&](auto key, bool descending, auto field) {
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
      const double kx = key(scores[x]);
      const double ky = key(scores[y]);
      if (kx != ky) return descending ? kx > ky : kx < ky;
      return scores[x].corpus_id < scores[y].corpus_id;
    });
    for (size_t r = 0; r < order.size(); ++r) scores[order[r]].*field = static_cast<int>(r + 1);
  };
  assign_ranks([](const CorpusScore& s) { return s.cosine; }, true,
               &CorpusScore::cosine_rank);
  assign_ranks([](const CorpusScore& s) { return s.rouge_precision; }, true,
               &CorpusScore::rouge_precision_rank);
  assign_ranks([](const CorpusScore& s) { return s.length_delta; }, false,
               &CorpusScore::length_rank);

  for (auto& s : scores) {
    s.avg_rank = (s.cosine_rank + s.rouge_precision_rank + s.length_rank) / 3.0;
  }
  std::sort(scores.begin(), scores.end(), [](const CorpusScore& a, const CorpusScore& b) {
    if (a.avg_rank != b.avg_rank) return a.avg_rank < b.avg_rank;
    return a.corpus_id < b.corpus_id;
  });
  for (size_t i = 0; i < scores.size(); ++i) scores[i].selected = i < top;
  return scores;
}

std::vector<MetaTask> sample_meta_tasks(const std::vector<Corpus>& sources, size_t k,
                                        size_t n_tasks, uint64_t seed) {
  if (sources.empty()) throw DataError("sample_meta_tasks: no source corpora");
  if (k == 0) throw DataError("sample_meta_tasks: k must be positive");
  if (n_tasks % sources.size() != 0)
    throw DataError("n_tasks not divisible by number of sources");
  const size_t per_source = n_tasks / sources.size();

  std::vector<MetaTask> tasks;
  tasks.reserve(n_tasks);
  for (const auto& source : sources) {
    if (source.size() < 2 * k) {
      throw DataError("corpus '" + source.id + "' has too few examples: needs " +
                      std::to_string(2 * k) + ", has " + std::to_string(source.size()));
    }
    Rng rng(derive_seed(seed, "meta-tasks:" + source.id));
    for (size_t t = 0; t < per_source; ++t) {
      const auto idx = rng.sample_indices(source.size(), 2 * k);
      MetaTask task;
      task.source_corpus = source.id;
      for (size_t i = 0; i < k; ++i) task.train_ids.push_back(source.records[idx[i]].id);
      for (size_t i = k; i < 2 * k; ++i) task.test_ids.push_back(source.records[idx[i]].id);
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

std::vector<MetaTask> load_meta_tasks(const std::string& path) {
  std::vector<MetaTask> out;
  for_each_jsonl(path, [&](size_t lineno, const Json& j) {
    const std::string where = path + ": line " + std::to_string(lineno);
    for (const char* field : {"source_corpus", "train_ids", "test_ids"}) {
      if (!j.contains(field)) throw DataError(where + ": missing field '" + field + "'");
    }
    MetaTask t;
    t.source_corpus = j["source_corpus"].get<std::string>();
    t.train_ids = j["train_ids"].get<std::vector<std::string>>();
    t.test_ids = j["test_ids"].get<std::vector<std::string>>();
    if (t.train_ids.size() != t.test_ids.size())
      throw DataError(where + ": task-train and task-test sizes differ");
    out.push_back(std::move(t));
  });
  return out;
}

void save_meta_tasks(const std::string& path, const std::vector<MetaTask>& tasks) {
  std::vector<Json> lines;
  lines.reserve(tasks.size());
  for (const auto& t : tasks) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["source_corpus"] = t.source_corpus;
    j["train_ids"] = t.train_ids;
    j["test_ids"] = t.test_ids;
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

}  // namespace prefsum
