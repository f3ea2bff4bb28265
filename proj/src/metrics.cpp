#include "prefsum/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "prefsum/jsonl.hpp"

namespace prefsum {

namespace {

RougeScore from_overlap(double overlap, double hyp_total, double ref_total) {
  RougeScore s;
  if (hyp_total <= 0.0 || ref_total <= 0.0) return s;
  s.precision = overlap / hyp_total;
  s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0.0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace

RougeScore rouge_n(const TokenSeq& reference, const TokenSeq& hypothesis, int n) {
  if (n < 1 || n > 2) throw std::invalid_argument("rouge_n: n must be 1 or 2");
  const auto ref_counts = ngram_counts(reference, static_cast<size_t>(n));
  const auto hyp_counts = ngram_counts(hypothesis, static_cast<size_t>(n));
  long overlap = 0;
  long ref_total = 0;
  long hyp_total = 0;
  for (const auto& [g, c] : ref_counts) {
    ref_total += c;
    const auto it = hyp_counts.find(g);
    if (it != hyp_counts.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : hyp_counts) hyp_total += c;
  return from_overlap(static_cast<double>(overlap), static_cast<double>(hyp_total),
                      static_cast<double>(ref_total));
}

RougeScore rouge_l(const TokenSeq& reference, const TokenSeq& hypothesis) {
  const auto& a = reference.tokens;
  const auto& b = hypothesis.tokens;
  if (a.empty() || b.empty()) return {};
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev[b.size()]);
  return from_overlap(lcs, static_cast<double>(b.size()), static_cast<double>(a.size()));
}

size_t FragmentSet::covered_tokens() const {
  size_t total = 0;
  for (const auto& f : fragments) total += f.length;
  return total;
}

double FragmentSet::squared_length_sum() const {
  double total = 0.0;
  for (const auto& f : fragments) {
    total += static_cast<double>(f.length) * static_cast<double>(f.length);
  }
  return total;
}

FragmentSet extractive_fragments(const TokenSeq& article, const TokenSeq& summary) {
  FragmentSet out;
  const auto& a = article.tokens;
  const auto& s = summary.tokens;
  std::unordered_map<std::string, std::vector<size_t>> positions;
  for (size_t j = 0; j < a.size(); ++j) positions[a[j]].push_back(j);

  size_t i = 0;
  while (i < s.size()) {
    size_t best_len = 0;
    size_t best_j = 0;
    const auto it = positions.find(s[i]);
    if (it != positions.end()) {
      for (size_t j : it->second) {
        size_t len = 0;
        while (i + len < s.size() && j + len < a.size() && a[j + len] == s[i + len]) ++len;
        if (len > best_len) {  // earliest start wins ties
          best_len = len;
          best_j = j;
        }
      }
    }
    if (best_len >= 1) {
      out.fragments.push_back({i, best_j, best_len});
      i += best_len;
    } else {
      ++i;
    }
  }
  return out;
}

std::pair<double, double> coverage_density(const FragmentSet& frags, size_t summary_len) {
  if (summary_len == 0) throw std::invalid_argument("empty summary");
  const double len = static_cast<double>(summary_len);
  return {static_cast<double>(frags.covered_tokens()) / len,
          frags.squared_length_sum() / len};
}

double novel_word_ratio(const TokenSeq& article, const TokenSeq& summary,
                        bool ignore_stopwords) {
  if (summary.empty()) throw std::invalid_argument("empty summary");
  std::unordered_set<std::string> article_types(article.tokens.begin(),
                                                article.tokens.end());
  size_t novel = 0;
  for (const auto& t : summary.tokens) {
    if (article_types.count(t)) continue;
    if (ignore_stopwords && is_stopword(t)) continue;
    ++novel;
  }
  return static_cast<double>(novel) / static_cast<double>(summary.size());
}

double compression_ratio(const TokenSeq& article, const TokenSeq& summary) {
  if (article.empty()) throw std::invalid_argument("empty article");
  return static_cast<double>(summary.size()) / static_cast<double>(article.size());
}

std::array<double, PreferenceVector::kDim> PreferenceVector::as_array() const {
  return {rouge1, rouge2, rougeL, compression, coverage, density, novel_ratio};
}

PreferenceVector PreferenceVector::from_array(const std::array<double, kDim>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
}

PreferenceVector PreferenceVector::from_vector(const std::vector<double>& v) {
  if (v.size() != kDim) throw DataError("preference vector must have 7 components");
  std::array<double, kDim> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return from_array(a);
}

std::vector<double> PreferenceVector::as_vector() const {
  const auto a = as_array();
  return std::vector<double>(a.begin(), a.end());
}

PreferenceVector preference_vector(const TokenSeq& article, const TokenSeq& summary,
                                   bool novel_ignore_stopwords) {
  if (article.empty()) throw std::invalid_argument("empty article");
  if (summary.empty()) throw std::invalid_argument("empty summary");
  PreferenceVector p;
  p.rouge1 = rouge_n(article, summary, 1).f1;
  p.rouge2 = rouge_n(article, summary, 2).f1;
  p.rougeL = rouge_l(article, summary).f1;
  p.compression = compression_ratio(article, summary);
  const auto frags = extractive_fragments(article, summary);
  std::tie(p.coverage, p.density) = coverage_density(frags, summary.size());
  p.novel_ratio = novel_word_ratio(article, summary, novel_ignore_stopwords);
  return p;
}

PreferenceVector preference_vector_text(const std::string& article,
                                        const std::string& summary,
                                        const MetricOptions& opts) {
  return preference_vector(normalize_tokenize(article, opts.tokenizer),
                           normalize_tokenize(summary, opts.tokenizer),
                           opts.novel_ignore_stopwords);
}

EvalReport eval_report(const std::vector<std::pair<std::string, std::string>>& hyp,
                       const std::vector<std::pair<std::string, std::string>>& ref,
                       const MetricOptions& opts, bool per_pair) {
  if (hyp.empty()) throw DataError("empty hypothesis set");
  if (ref.empty()) throw DataError("empty reference set");
  std::map<std::string, std::string> ref_by_id;
  for (const auto& [id, text] : ref) ref_by_id[id] = text;

  std::vector<std::string> missing;
  for (const auto& [id, text] : hyp) {
    if (!ref_by_id.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "hypothesis ids missing from references:";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }

  EvalReport report;
  double sum1 = 0.0, sum2 = 0.0, sumL = 0.0;
  for (const auto& [id, text] : hyp) {
    const TokenSeq h = normalize_tokenize(text, opts.tokenizer);
    const TokenSeq r = normalize_tokenize(ref_by_id.at(id), opts.tokenizer);
    const double f1 = rouge_n(r, h, 1).f1;
    const double f2 = rouge_n(r, h, 2).f1;
    const double fL = rouge_l(r, h).f1;
    sum1 += f1;
    sum2 += f2;
    sumL += fL;
    if (per_pair) report.per_pair.push_back({f1 * 100.0, f2 * 100.0, fL * 100.0});
  }
  const auto n = static_cast<double>(hyp.size());
  report.n_pairs = hyp.size();
  report.rouge1 = round2(sum1 / n * 100.0);
  report.rouge2 = round2(sum2 / n * 100.0);
  report.rougeL = round2(sumL / n * 100.0);
  return report;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }
double round4(double v) { return std::round(v * 10000.0) / 10000.0; }

}  // namespace prefsum
