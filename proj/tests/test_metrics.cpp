#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "prefsum/jsonl.hpp"
#include "prefsum/metrics.hpp"
#include "prefsum/rng.hpp"
#include "support/oracles.hpp"

using namespace prefsum;

namespace {

TokenSeq seq(std::vector<std::string> tokens) {
  TokenSeq s;
  s.tokens = std::move(tokens);
  return s;
}

}  // namespace

TEST_CASE("rouge_n examples") {
  const auto same = seq({"the", "cat", "sat"});
  auto s = rouge_n(same, same, 1);
  CHECK(s.precision == doctest::Approx(1.0));
  CHECK(s.recall == doctest::Approx(1.0));
  CHECK(s.f1 == doctest::Approx(1.0));

  s = rouge_n(seq({"the", "cat", "sat"}), seq({"the", "cat"}), 1);
  CHECK(s.precision == doctest::Approx(1.0));
  CHECK(s.recall == doctest::Approx(2.0 / 3.0));
  CHECK(s.f1 == doctest::Approx(0.8));

  s = rouge_n(seq({"a", "b"}), seq({"c", "d"}), 1);
  CHECK(s.f1 == 0.0);
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);

  CHECK(rouge_n(seq({}), seq({"a"}), 1).f1 == 0.0);
  CHECK_THROWS_AS(rouge_n(same, same, 3), std::invalid_argument);
}

TEST_CASE("rouge_l examples") {
  auto s = rouge_l(seq({"a", "b", "c", "d"}), seq({"a", "c", "b", "d"}));
  CHECK(s.precision == doctest::Approx(0.75));
  CHECK(s.recall == doctest::Approx(0.75));
  CHECK(s.f1 == doctest::Approx(0.75));
  CHECK(rouge_l(seq({"x"}), seq({})).f1 == 0.0);
  const auto same = seq({"p", "q"});
  CHECK(rouge_l(same, same).f1 == doctest::Approx(1.0));
}

TEST_CASE("rouge matches brute-force oracles on random pairs") {
  Rng rng(101);
  for (int trial = 0; trial < 400; ++trial) {
    TokenSeq ref, hyp;
    ref.tokens = oracles::random_tokens(rng, 12, 5);
    hyp.tokens = oracles::random_tokens(rng, 12, 5);
    for (int n = 1; n <= 2; ++n) {
      const auto got = rouge_n(ref, hyp, n);
      const auto want = oracles::brute_rouge_n(ref.tokens, hyp.tokens, n);
      CHECK(got.precision == doctest::Approx(want.precision).epsilon(1e-12));
      CHECK(got.recall == doctest::Approx(want.recall).epsilon(1e-12));
      CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
    }
    const auto got = rouge_l(ref, hyp);
    const auto want = oracles::brute_rouge_l(ref.tokens, hyp.tokens);
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
  }
}

TEST_CASE("f1 bounds") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    TokenSeq ref, hyp;
    ref.tokens = oracles::random_tokens(rng, 10, 4);
    hyp.tokens = oracles::random_tokens(rng, 10, 4);
    for (const auto& s : {rouge_n(ref, hyp, 1), rouge_n(ref, hyp, 2), rouge_l(ref, hyp)}) {
      CHECK((s.f1 == 0.0) == (s.precision == 0.0 || s.recall == 0.0));
      CHECK(s.f1 <= 2.0 * std::min(s.precision, s.recall) + 1e-12);
    }
  }
}

TEST_CASE("extractive fragments") {
  SUBCASE("full extraction") {
    const auto f = extractive_fragments(seq({"a", "b", "c"}), seq({"a", "b", "c"}));
    REQUIRE(f.fragments.size() == 1);
    CHECK(f.fragments[0].length == 3);
  }
  SUBCASE("split fragments") {
    const auto f =
        extractive_fragments(seq({"a", "b", "c", "d", "e"}), seq({"a", "b", "d"}));
    REQUIRE(f.fragments.size() == 2);
    CHECK(f.fragments[0].length == 2);
    CHECK(f.fragments[1].length == 1);
  }
  SUBCASE("no overlap") {
    CHECK(extractive_fragments(seq({"a"}), seq({"z", "q"})).fragments.empty());
  }
  SUBCASE("earliest article start wins ties") {
    const auto f = extractive_fragments(seq({"x", "a", "y", "a", "z"}), seq({"a"}));
    REQUIRE(f.fragments.size() == 1);
    CHECK(f.fragments[0].article_pos == 1);
  }
}

TEST_CASE("fragments match brute-force scan on random pairs") {
  Rng rng(33);
  for (int trial = 0; trial < 300; ++trial) {
    TokenSeq art, sum;
    art.tokens = oracles::random_tokens(rng, 14, 4);
    sum.tokens = oracles::random_tokens(rng, 8, 4);
    const auto got = extractive_fragments(art, sum);
    const auto want = oracles::brute_fragment_lengths(art.tokens, sum.tokens);
    REQUIRE(got.fragments.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(got.fragments[i].length == want[i]);
    // Fragments tile the summary left to right without overlap.
    size_t prev_end = 0;
    for (const auto& f : got.fragments) {
      CHECK(f.summary_pos >= prev_end);
      prev_end = f.summary_pos + f.length;
      CHECK(prev_end <= sum.size());
    }
  }
}

TEST_CASE("coverage and density") {
  FragmentSet one;
  one.fragments = {{0, 0, 3}};
  auto [cov, dens] = coverage_density(one, 3);
  CHECK(cov == doctest::Approx(1.0));
  CHECK(dens == doctest::Approx(3.0));

  FragmentSet two;
  two.fragments = {{0, 0, 2}, {2, 4, 1}};
  std::tie(cov, dens) = coverage_density(two, 3);
  CHECK(cov == doctest::Approx(1.0));
  CHECK(dens == doctest::Approx(5.0 / 3.0));

  std::tie(cov, dens) = coverage_density(FragmentSet{}, 4);
  CHECK(cov == 0.0);
  CHECK(dens == 0.0);

  CHECK_THROWS_WITH_AS(coverage_density(one, 0), "empty summary", std::invalid_argument);
}

TEST_CASE("verbatim excerpt has coverage 1 and density L") {
  const auto art = seq({"a", "b", "c", "d", "e", "f"});
  const auto sum = seq({"c", "d", "e"});
  const auto f = extractive_fragments(art, sum);
  auto [cov, dens] = coverage_density(f, sum.size());
  CHECK(cov == doctest::Approx(1.0));
  CHECK(dens == doctest::Approx(3.0));
}

TEST_CASE("novel word ratio") {
  CHECK(novel_word_ratio(seq({"a", "b", "c"}), seq({"a", "b"})) == doctest::Approx(0.0));
  CHECK(novel_word_ratio(seq({"a", "b", "c"}), seq({"a", "b", "z"})) ==
        doctest::Approx(1.0 / 3.0));
  CHECK(novel_word_ratio(seq({}), seq({"q", "r"})) == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(novel_word_ratio(seq({"a"}), seq({})), "empty summary",
                       std::invalid_argument);
  // Stopword-excluded numerator.
  CHECK(novel_word_ratio(seq({"cat"}), seq({"the", "cat", "ran"}), true) ==
        doctest::Approx(1.0 / 3.0));
}

TEST_CASE("compression ratio") {
  TokenSeq art, sum;
  for (int i = 0; i < 50; ++i) art.tokens.push_back("x" + std::to_string(i));
  for (int i = 0; i < 5; ++i) sum.tokens.push_back("x" + std::to_string(i));
  CHECK(compression_ratio(art, sum) == doctest::Approx(0.1));
  CHECK(compression_ratio(art, art) == doctest::Approx(1.0));
  CHECK(compression_ratio(seq({"a", "b", "c"}), seq({"p", "q", "r", "s", "t", "u", "v"})) ==
        doctest::Approx(7.0 / 3.0));
  CHECK_THROWS_WITH_AS(compression_ratio(seq({}), sum), "empty article",
                       std::invalid_argument);
}

TEST_CASE("preference vector identity text") {
  const auto t = seq({"u", "v", "w", "x"});
  const auto p = preference_vector(t, t);
  CHECK(p.rouge1 == doctest::Approx(1.0));
  CHECK(p.rouge2 == doctest::Approx(1.0));
  CHECK(p.rougeL == doctest::Approx(1.0));
  CHECK(p.compression == doctest::Approx(1.0));
  CHECK(p.coverage == doctest::Approx(1.0));
  CHECK(p.density == doctest::Approx(4.0));
  CHECK(p.novel_ratio == doctest::Approx(0.0));
  const auto arr = p.as_array();
  CHECK(arr[3] == doctest::Approx(1.0));  // serialized order: r1 r2 rL cr cov dens nwr
  CHECK(arr[5] == doctest::Approx(4.0));
}

TEST_CASE("preference vector permutation stability") {
  // Shuffling article sentences leaves compression and novel ratio unchanged.
  Rng rng(71);
  const std::vector<std::string> sents = {"the cat sat down.", "a dog ran away.",
                                          "birds fly south.", "fish swim deep."};
  const std::string summary = "the cat ran south";
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> shuffled = sents;
    rng.shuffle(shuffled);
    std::string art0, art1;
    for (const auto& s : sents) art0 += s + " ";
    for (const auto& s : shuffled) art1 += s + " ";
    const auto p0 = preference_vector_text(art0, summary);
    const auto p1 = preference_vector_text(art1, summary);
    CHECK(p0.compression == doctest::Approx(p1.compression).epsilon(1e-12));
    CHECK(p0.novel_ratio == doctest::Approx(p1.novel_ratio).epsilon(1e-12));
    CHECK(p0.rouge1 == doctest::Approx(p1.rouge1).epsilon(1e-12));
  }
}

TEST_CASE("eval report") {
  std::vector<std::pair<std::string, std::string>> hyp = {{"1", "the cat sat"},
                                                          {"2", "dogs run fast"}};
  const auto report = eval_report(hyp, hyp, {});
  CHECK(report.rouge1 == doctest::Approx(100.0));
  CHECK(report.rouge2 == doctest::Approx(100.0));
  CHECK(report.rougeL == doctest::Approx(100.0));
  CHECK(report.n_pairs == 2);

  CHECK_THROWS_AS(eval_report({}, hyp, {}), DataError);
  std::vector<std::pair<std::string, std::string>> missing = {{"9", "x"}};
  CHECK_THROWS_AS(eval_report(missing, hyp, {}), DataError);
}

TEST_CASE("rounding helpers") {
  CHECK(round2(78.5714) == doctest::Approx(78.57));
  CHECK(round4(0.123456) == doctest::Approx(0.1235));
}
