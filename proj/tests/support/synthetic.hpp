#pragma once

// Deterministic synthetic corpora for training and decoding tests.

#include <string>
#include <vector>

#include "prefsum/corpus.hpp"
#include "prefsum/rng.hpp"
#include "prefsum/vocab.hpp"

namespace synthetic {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> kWords = {
      "rain", "wind", "cloud", "storm", "river", "stone", "tree", "leaf",
      "bird", "fish", "moon",  "star",  "snow",  "fog",   "hill"};
  return kWords;
}

inline std::string random_filler(prefsum::Rng& rng, size_t n) {
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += filler_words()[rng.below(filler_words().size())];
  }
  return out;
}

// Distinct article/summary pairs for memorization runs.
inline prefsum::Corpus memorization_corpus(size_t n, uint64_t seed) {
  prefsum::Rng rng(seed);
  prefsum::Corpus corpus;
  corpus.id = "memorize";
  for (size_t i = 0; i < n; ++i) {
    prefsum::ExampleRecord r;
    r.id = "m" + std::to_string(i);
    // A unique leading token keeps articles distinguishable.
    r.article = "doc" + std::to_string(i) + " " + random_filler(rng, 6) + ".";
    r.summary = "doc" + std::to_string(i) + " " + random_filler(rng, 2);
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

// Two-mode corpus where the summary style is a deterministic function of the
// preference vector: mode A copies the article's fixed opening phrase
// (fully extractive), mode B emits a fixed phrase absent from every article
// (fully novel). The preference vectors of the two modes are well separated.
struct TwoModeData {
  prefsum::Corpus train;   // annotated, both modes
  prefsum::Corpus test_a;  // held-out mode-A items
  prefsum::Corpus test_b;  // held-out mode-B items
  std::string phrase_a = "alpha beta gamma";
  std::string phrase_b = "zulu yankee xray";
};

inline TwoModeData two_mode_corpus(size_t n_per_mode, size_t held_out_per_mode,
                                   uint64_t seed) {
  prefsum::Rng rng(seed);
  TwoModeData data;
  data.train.id = "twomode";
  data.test_a.id = "twomode_test_a";
  data.test_b.id = "twomode_test_b";

  auto make_a = [&](const std::string& id) {
    prefsum::ExampleRecord r;
    r.id = id;
    r.article = data.phrase_a + " " + random_filler(rng, 8) + ".";
    r.summary = data.phrase_a;
    return r;
  };
  auto make_b = [&](const std::string& id) {
    prefsum::ExampleRecord r;
    r.id = id;
    r.article = random_filler(rng, 10) + ".";
    r.summary = data.phrase_b;
    return r;
  };
  for (size_t i = 0; i < n_per_mode; ++i) {
    data.train.records.push_back(make_a("a" + std::to_string(i)));
    data.train.records.push_back(make_b("b" + std::to_string(i)));
  }
  for (size_t i = 0; i < held_out_per_mode; ++i) {
    data.test_a.records.push_back(make_a("ta" + std::to_string(i)));
    data.test_b.records.push_back(make_b("tb" + std::to_string(i)));
  }
  return data;
}

inline std::vector<std::string> corpus_texts(const prefsum::Corpus& c) {
  std::vector<std::string> texts;
  for (const auto& r : c.records) {
    texts.push_back(r.article);
    if (r.summary) texts.push_back(*r.summary);
  }
  return texts;
}

// Annotated multi-sentence corpus for meta-task sources.
inline prefsum::Corpus source_corpus(const std::string& id, size_t n, uint64_t seed) {
  prefsum::Rng rng(seed);
  prefsum::Corpus corpus;
  corpus.id = id;
  for (size_t i = 0; i < n; ++i) {
    prefsum::ExampleRecord r;
    r.id = id + "_" + std::to_string(i);
    const std::string head = random_filler(rng, 3);
    r.article = head + " " + random_filler(rng, 5) + ". " + random_filler(rng, 6) + ".";
    r.summary = head;
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

}  // namespace synthetic
