#include "prefsum/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

namespace prefsum {

namespace {

bool ascii_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool ascii_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool ascii_digit(char c) { return c >= '0' && c <= '9'; }

// Decodes the UTF-8 codepoint starting at i; advances len. Invalid bytes are
// returned as-is (single byte) so tokenization never fails.
uint32_t decode_utf8(const std::string& s, size_t i, size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  len = 1;
  if (b0 < 0x80) return b0;
  uint32_t cp = 0;
  size_t need = 0;
  if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    need = 1;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    need = 2;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    need = 3;
  } else {
    return b0;
  }
  if (i + need >= s.size() + 1 && i + need > s.size()) return b0;
  for (size_t k = 1; k <= need; ++k) {
    if (i + k >= s.size()) return b0;
    const auto bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0) != 0x80) return b0;
    cp = (cp << 6) | (bk & 0x3F);
  }
  len = need + 1;
  return cp;
}

bool unicode_separator(uint32_t cp) {
  switch (cp) {
    case 0x00A0:  // nbsp
    case 0x2010:  // hyphen (handled like '-', see caller)
    case 0x2013:
    case 0x2014:
    case 0x2018:
    case 0x201C:
    case 0x201D:
    case 0x2026:
    case 0x00AB:
    case 0x00BB:
      return true;
    default:
      return false;
  }
}

// True when the codepoint at position i is a word character for kWords mode.
bool word_char_at(const std::string& s, size_t i) {
  if (i >= s.size()) return false;
  const char c = s[i];
  if (static_cast<unsigned char>(c) < 0x80) return ascii_alnum(c);
  size_t len = 0;
  const uint32_t cp = decode_utf8(s, i, len);
  return !unicode_separator(cp) && cp != 0x2019;
}

const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> kAbbrev = {
      "mr",  "mrs", "ms",  "dr",   "prof", "rev",  "gen",  "col", "lt",
      "sgt", "capt", "cmdr", "sr", "jr",   "st",   "ave",  "blvd", "rd",
      "vs",  "etc", "inc", "ltd",  "co",   "corp", "dept", "univ", "est",
      "approx", "fig", "vol", "ch", "pp",  "ed",   "al",   "jan",  "feb",
      "mar", "apr", "jun", "jul",  "aug",  "sep",  "sept", "oct",  "nov",
      "dec", "mt",  "ft",  "e.g", "i.e",  "u.s",  "u.k"};
  return kAbbrev;
}

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> kStop = {
      "a",    "an",    "the",   "and",   "or",    "but",   "if",    "then",
      "than", "that",  "this",  "these", "those", "there", "here",  "is",
      "are",  "was",   "were",  "be",    "been",  "being", "am",    "has",
      "have", "had",   "having", "do",   "does",  "did",   "doing", "will",
      "would", "shall", "should", "can", "could", "may",   "might", "must",
      "of",   "in",    "on",    "at",    "by",    "for",   "with",  "to",
      "from", "as",    "it",    "its",   "he",    "she",   "they",  "them",
      "his",  "her",   "hers",  "their", "theirs", "we",   "us",    "our",
      "ours", "you",   "your",  "yours", "i",     "me",    "my",    "mine",
      "not",  "no",    "nor",   "so",    "too",   "very",  "own",   "same",
      "such", "s",     "t",     "d",     "ll",    "m",     "o",     "re",
      "ve",   "y"};
  return kStop;
}

// ---------------------------------------------------------------------------
// Porter stemmer (1980), operating on a lowercase ASCII word.

struct Stemmer {
  std::string w;

  bool consonant(size_t i) const {
    const char c = w[i];
    if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
    if (c == 'y') return i == 0 ? true : !consonant(i - 1);
    return true;
  }

  // Number of VC sequences in w[0..end).
  int measure(size_t end) const {
    int m = 0;
    size_t i = 0;
    while (i < end && consonant(i)) ++i;
    while (i < end) {
      while (i < end && !consonant(i)) ++i;
      if (i >= end) break;
      ++m;
      while (i < end && consonant(i)) ++i;
    }
    return m;
  }

  bool has_vowel(size_t end) const {
    for (size_t i = 0; i < end; ++i)
      if (!consonant(i)) return true;
    return false;
  }

  bool ends(const char* suffix) const {
    const size_t n = std::char_traits<char>::length(suffix);
    if (n > w.size()) return false;
    return w.compare(w.size() - n, n, suffix) == 0;
  }

  size_t stem_len(const char* suffix) const {
    return w.size() - std::char_traits<char>::length(suffix);
  }

  bool double_consonant() const {
    const size_t n = w.size();
    if (n < 2) return false;
    return w[n - 1] == w[n - 2] && consonant(n - 1);
  }

  // consonant-vowel-consonant ending where the final consonant is not w/x/y.
  bool cvc(size_t end) const {
    if (end < 3) return false;
    if (!consonant(end - 3) || consonant(end - 2) || !consonant(end - 1)) return false;
    const char c = w[end - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool replace(const char* suffix, const char* repl, int min_measure) {
    if (!ends(suffix)) return false;
    const size_t sl = stem_len(suffix);
    if (measure(sl) > min_measure) {
      w = w.substr(0, sl) + repl;
      return true;
    }
    return false;
  }

  void step1a() {
    if (ends("sses")) {
      w.resize(w.size() - 2);
    } else if (ends("ies")) {
      w.resize(w.size() - 2);
    } else if (!ends("ss") && ends("s")) {
      w.resize(w.size() - 1);
    }
  }

  void step1b() {
    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) w.resize(w.size() - 1);
      return;
    }
    bool stripped = false;
    if (ends("ed") && has_vowel(stem_len("ed"))) {
      w.resize(w.size() - 2);
      stripped = true;
    } else if (ends("ing") && has_vowel(stem_len("ing"))) {
      w.resize(w.size() - 3);
      stripped = true;
    }
    if (!stripped) return;
    if (ends("at") || ends("bl") || ends("iz")) {
      w += 'e';
    } else if (double_consonant() && !ends("l") && !ends("s") && !ends("z")) {
      w.resize(w.size() - 1);
    } else if (measure(w.size()) == 1 && cvc(w.size())) {
      w += 'e';
    }
  }

  void step1c() {
    if (ends("y") && has_vowel(w.size() - 1)) w[w.size() - 1] = 'i';
  }

  void step2() {
    static const std::array<std::pair<const char*, const char*>, 20> kMap = {{
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},
        {"anci", "ance"},   {"izer", "ize"},    {"abli", "able"},
        {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},
        {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},
        {"iviti", "ive"},   {"biliti", "ble"},
    }};
    for (const auto& [suf, rep] : kMap)
      if (ends(suf)) {
        replace(suf, rep, 0);
        return;
      }
  }

  void step3() {
    static const std::array<std::pair<const char*, const char*>, 7> kMap = {{
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ful", ""},   {"ness", ""},
    }};
    for (const auto& [suf, rep] : kMap)
      if (ends(suf)) {
        replace(suf, rep, 0);
        return;
      }
  }

  void step4() {
    static const std::array<const char*, 18> kSuffixes = {
        "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement",
        "ment", "ent", "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize"};
    for (const char* suf : kSuffixes) {
      if (ends(suf)) {
        if (measure(stem_len(suf)) > 1) w.resize(stem_len(suf));
        return;
      }
    }
    if (ends("ion")) {
      const size_t sl = stem_len("ion");
      if (sl > 0 && (w[sl - 1] == 's' || w[sl - 1] == 't') && measure(sl) > 1)
        w.resize(sl);
    }
  }

  void step5() {
    if (ends("e")) {
      const size_t sl = w.size() - 1;
      const int m = measure(sl);
      if (m > 1 || (m == 1 && !cvc(sl))) w.resize(sl);
    }
    if (w.size() >= 2 && w[w.size() - 1] == 'l' && double_consonant() &&
        measure(w.size() - 1) > 1) {
      w.resize(w.size() - 1);
    }
  }
};

}  // namespace

std::string porter_stem(const std::string& word) {
  if (word.size() <= 2) return word;
  for (char c : word)
    if (c < 'a' || c > 'z') return word;
  Stemmer st{word};
  st.step1a();
  st.step1b();
  st.step1c();
  st.step2();
  st.step3();
  st.step4();
  st.step5();
  return st.w;
}

bool is_stopword(const std::string& token) {
  return stopwords().count(token) > 0;
}

std::string TokenSeq::joined() const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

TokenSeq normalize_tokenize(const std::string& text, const TokenizerOptions& opts) {
  TokenSeq seq;
  seq.source_len_chars = text.size();
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      seq.tokens.push_back(opts.stem ? porter_stem(cur) : cur);
      cur.clear();
    }
  };

  if (opts.mode == TokenizerMode::kAlnum) {
    for (char c : text) {
      if (ascii_alnum(c)) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else {
        flush();
      }
    }
    flush();
    return seq;
  }

  size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      const char c = text[i];
      if (ascii_alnum(c)) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if ((c == '-' || c == '\'') && !cur.empty() && word_char_at(text, i + 1)) {
        cur += c;
      } else {
        flush();
      }
      ++i;
      continue;
    }
    size_t len = 0;
    const uint32_t cp = decode_utf8(text, i, len);
    if (cp == 0x2019) {  // curly apostrophe, same rule as '
      if (!cur.empty() && word_char_at(text, i + len)) {
        cur += '\'';
      } else {
        flush();
      }
    } else if (cp == 0x2010) {  // unicode hyphen, same rule as -
      if (!cur.empty() && word_char_at(text, i + len)) {
        cur += '-';
      } else {
        flush();
      }
    } else if (unicode_separator(cp)) {
      flush();
    } else {
      cur.append(text, i, len);
    }
    i += len;
  }
  flush();
  return seq;
}

namespace {

// Extracts the dotted word immediately before position `dot` ("Dr", "e.g").
std::string token_before_period(const std::string& text, size_t dot) {
  size_t begin = dot;
  while (begin > 0) {
    const char c = text[begin - 1];
    if (ascii_alnum(c) || c == '.') {
      --begin;
    } else {
      break;
    }
  }
  return text.substr(begin, dot - begin);
}

bool suppress_split(const std::string& text, size_t dot) {
  const std::string tok = token_before_period(text, dot);
  if (tok.empty()) return false;
  std::string lower;
  for (char c : tok) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (abbreviations().count(lower)) return true;
  // Uppercase single-letter segment: initials ("J. Smith", "U.S.").
  const size_t last_dot = tok.rfind('.');
  const std::string segment = last_dot == std::string::npos ? tok : tok.substr(last_dot + 1);
  return segment.size() == 1 && ascii_upper(segment[0]);
}

bool opens_sentence(const std::string& text, size_t i) {
  const char c = text[i];
  if (ascii_upper(c) || ascii_digit(c) || c == '"' || c == '\'') return true;
  size_t len = 0;
  const uint32_t cp = decode_utf8(text, i, len);
  return cp == 0x2018 || cp == 0x201C || cp == 0x00AB;
}

}  // namespace

SentenceSplit split_sentences(const std::string& text) {
  SentenceSplit out;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return out;

  std::vector<size_t> boundaries;  // start index of each sentence after the first
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    if (c == '.' && suppress_split(text, i)) {
      ++i;
      continue;
    }
    // Skip runs of terminators and closing quotes.
    size_t j = i + 1;
    while (j < text.size() &&
           (text[j] == '.' || text[j] == '!' || text[j] == '?' || text[j] == '"' ||
            text[j] == '\'' || text[j] == ')' || text[j] == ']')) {
      ++j;
    }
    size_t k = j;
    while (k < text.size() && (text[k] == ' ' || text[k] == '\t' || text[k] == '\n' ||
                               text[k] == '\r')) {
      ++k;
    }
    if (k > j && k < text.size() && opens_sentence(text, k)) {
      boundaries.push_back(k);
      i = k;
    } else {
      i = j;
    }
  }

  size_t begin = 0;
  auto emit = [&](size_t end) {
    out.sentences.push_back(text.substr(begin, end - begin));
    out.offsets.push_back({begin, end});
    begin = end;
  };
  for (size_t b : boundaries) emit(b);
  emit(text.size());
  return out;
}

std::vector<std::string> ngrams(const TokenSeq& seq, size_t n) {
  std::vector<std::string> out;
  if (n == 0 || seq.tokens.size() < n) return out;
  out.reserve(seq.tokens.size() - n + 1);
  for (size_t i = 0; i + n <= seq.tokens.size(); ++i) {
    std::string key = seq.tokens[i];
    for (size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += seq.tokens[i + k];
    }
    out.push_back(std::move(key));
  }
  return out;
}

std::unordered_map<std::string, int> ngram_counts(const TokenSeq& seq, size_t n) {
  std::unordered_map<std::string, int> counts;
  for (auto& g : ngrams(seq, n)) ++counts[g];
  return counts;
}

}  // namespace prefsum
