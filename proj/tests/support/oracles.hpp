#pragma once

// Independent brute-force oracles, kept free of the library's metric code
// paths: explicit multiset intersection for n-gram overlap, exhaustive
// subsequence search for LCS, and a quadratic-scan fragment matcher.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "prefsum/rng.hpp"

namespace oracles {

using Tokens = std::vector<std::string>;

struct Prf {
  double precision = 0, recall = 0, f1 = 0;
};

inline Prf prf_from_overlap(long overlap, long hyp_total, long ref_total) {
  Prf s;
  if (hyp_total <= 0 || ref_total <= 0) return s;
  s.precision = double(overlap) / double(hyp_total);
  s.recall = double(overlap) / double(ref_total);
  if (s.precision + s.recall > 0)
    s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

inline Prf brute_rouge_n(const Tokens& ref, const Tokens& hyp, int n) {
  auto grams = [n](const Tokens& t) {
    std::map<Tokens, long> counts;
    for (size_t i = 0; i + n <= t.size(); ++i)
      ++counts[Tokens(t.begin() + i, t.begin() + i + n)];
    return counts;
  };
  const auto r = grams(ref);
  const auto h = grams(hyp);
  long overlap = 0, rt = 0, ht = 0;
  for (const auto& [g, c] : r) {
    rt += c;
    const auto it = h.find(g);
    if (it != h.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : h) ht += c;
  return prf_from_overlap(overlap, ht, rt);
}

// Exhaustive LCS: enumerate every subsequence of `a` by bitmask and test it
// against `b`. Only usable for |a| <= ~16.
inline size_t brute_lcs(const Tokens& a, const Tokens& b) {
  size_t best = 0;
  for (uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (size_t i = 0; i < a.size(); ++i)
      if (mask & (1u << i)) sub.push_back(a[i]);
    if (sub.size() <= best) continue;
    size_t j = 0;
    for (size_t i = 0; i < b.size() && j < sub.size(); ++i)
      if (b[i] == sub[j]) ++j;
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

inline Prf brute_rouge_l(const Tokens& ref, const Tokens& hyp) {
  if (ref.empty() || hyp.empty()) return {};
  const long lcs = static_cast<long>(brute_lcs(ref, hyp));
  return prf_from_overlap(lcs, static_cast<long>(hyp.size()),
                          static_cast<long>(ref.size()));
}

// Greedy fragment lengths via a direct quadratic rescan at every summary
// position (longest match, earliest article start).
inline std::vector<size_t> brute_fragment_lengths(const Tokens& article,
                                                  const Tokens& summary) {
  std::vector<size_t> lengths;
  size_t i = 0;
  while (i < summary.size()) {
    size_t best = 0;
    for (size_t j = 0; j < article.size(); ++j) {
      size_t len = 0;
      while (i + len < summary.size() && j + len < article.size() &&
             article[j + len] == summary[i + len])
        ++len;
      best = std::max(best, len);
    }
    if (best >= 1) {
      lengths.push_back(best);
      i += best;
    } else {
      ++i;
    }
  }
  return lengths;
}

inline Tokens random_tokens(prefsum::Rng& rng, size_t max_len, size_t vocab) {
  Tokens out;
  const size_t len = rng.below(max_len + 1);
  for (size_t i = 0; i < len; ++i)
    out.push_back("w" + std::to_string(rng.below(vocab)));
  return out;
}

}  // namespace oracles
