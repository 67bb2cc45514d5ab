#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>
#include <vector>

#include "raven/corruption.hpp"
#include "raven/synthetic.hpp"
#include "raven/tokenizer.hpp"
#include "testutil.hpp"

using namespace raven;

namespace {

// Independent reconstruction: walk the corrupted text and, at each sentinel,
// splice in the tokens that follow the same sentinel in the target.
std::vector<int> splice_reconstruct(const CorruptedSample& s) {
  std::vector<int> out;
  for (int t : s.encoder_tokens) {
    if (!Tokenizer::is_sentinel(t)) {
      out.push_back(t);
      continue;
    }
    size_t j = 0;
    while (j < s.target.size() && s.target[j] != t) ++j;
    REQUIRE(j < s.target.size());
    ++j;
    while (j < s.target.size() && !Tokenizer::is_sentinel(s.target[j]) &&
           s.target[j] != Tokenizer::kEos) {
      out.push_back(s.target[j]);
      ++j;
    }
  }
  return out;
}

std::vector<int> random_tokens(Rng& rng, int64_t len) {
  std::vector<int> t(len);
  for (auto& x : t)
    x = static_cast<int>(uniform_int(rng, Tokenizer::kReservedCount, 999));
  return t;
}

std::vector<int> strip_sentinels(const std::vector<int>& v) {
  std::vector<int> out;
  for (int t : v)
    if (!Tokenizer::is_sentinel(t)) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("span masking reconstructs the original sequence", "[corruption]") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    auto tokens = random_tokens(rng, uniform_int(rng, 8, 120));
    auto s = mask_spans(tokens, rng);
    REQUIRE(s.has_value());
    CHECK(splice_reconstruct(*s) == tokens);
    CHECK(s->objective == Objective::mask);
    // sentinels appear left to right as <extra_id_0>, <extra_id_1>, ...
    int expect = 0;
    for (int t : s->encoder_tokens)
      if (Tokenizer::is_sentinel(t)) CHECK(t == Tokenizer::sentinel_id(expect++));
    CHECK(expect >= 1);
    REQUIRE(!s->target.empty());
    CHECK(s->target.front() == Tokenizer::sentinel_id(0));
    CHECK(s->target.back() == Tokenizer::kEos);
    CHECK(s->retrieval_query == strip_sentinels(s->encoder_tokens));
  }
}

TEST_CASE("masked fraction matches the configured rates", "[corruption]") {
  Rng rng = make_rng(12);
  double span_sum = 0.0, suffix_sum = 0.0;
  const int kSamples = 10000;
  for (int i = 0; i < kSamples; ++i) {
    auto tokens = random_tokens(rng, uniform_int(rng, 40, 100));
    auto a = mask_spans(tokens, rng);
    REQUIRE(a.has_value());
    span_sum += masked_fraction(*a, tokens.size());
    auto b = mask_suffix(tokens, rng);
    REQUIRE(b.has_value());
    suffix_sum += masked_fraction(*b, tokens.size());
  }
  CHECK_THAT(span_sum / kSamples, Catch::Matchers::WithinAbs(0.15, 0.02));
  CHECK_THAT(suffix_sum / kSamples, Catch::Matchers::WithinAbs(0.10, 0.01));
}

TEST_CASE("suffix masking yields a prefix continuation task", "[corruption]") {
  Rng rng = make_rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    auto tokens = random_tokens(rng, uniform_int(rng, 10, 90));
    auto s = mask_suffix(tokens, rng);
    REQUIRE(s.has_value());
    CHECK(s->objective == Objective::prefix);
    CHECK(splice_reconstruct(*s) == tokens);
    // exactly one sentinel, at the end of the corrupted text
    REQUIRE(!s->encoder_tokens.empty());
    CHECK(s->encoder_tokens.back() == Tokenizer::sentinel_id(0));
    CHECK(strip_sentinels(s->encoder_tokens).size() ==
          s->encoder_tokens.size() - 1);
    // the retrieval query is the bare prefix: no target token position leaks
    size_t prefix_len = s->encoder_tokens.size() - 1;
    CHECK(s->retrieval_query ==
          std::vector<int>(tokens.begin(), tokens.begin() + prefix_len));
    REQUIRE(s->target.size() >= 3);
    CHECK(s->target.front() == Tokenizer::sentinel_id(0));
    CHECK(s->target.back() == Tokenizer::kEos);
  }
}

TEST_CASE("mixed corruption combines spans with a reserved suffix sentinel",
          "[corruption]") {
  Rng rng = make_rng(14);
  const int kSuffixSentinel = Tokenizer::sentinel_id(Tokenizer::kNumSentinels - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    auto tokens = random_tokens(rng, uniform_int(rng, 20, 120));
    auto s = mix_corrupt(tokens, rng);
    REQUIRE(s.has_value());
    CHECK(s->objective == Objective::mix);
    CHECK(splice_reconstruct(*s) == tokens);
    REQUIRE(!s->encoder_tokens.empty());
    CHECK(s->encoder_tokens.back() == kSuffixSentinel);
    // at least one span sentinel plus the suffix sentinel, strictly increasing
    std::vector<int> sentinels;
    for (int t : s->encoder_tokens)
      if (Tokenizer::is_sentinel(t)) sentinels.push_back(t);
    REQUIRE(sentinels.size() >= 2);
    for (size_t i = 1; i < sentinels.size(); ++i)
      CHECK(sentinels[i] > sentinels[i - 1]);
    CHECK(sentinels.front() == Tokenizer::sentinel_id(0));
    CHECK(s->retrieval_query == strip_sentinels(s->encoder_tokens));
  }
}

TEST_CASE("mixed corruption without the suffix equals span masking",
          "[corruption]") {
  Rng src = make_rng(150);
  auto tokens = random_tokens(src, 64);
  Rng a = make_rng(15), b = make_rng(15);
  auto plain = mask_spans(tokens, a);
  auto mixed = mix_corrupt(tokens, b, /*include_suffix=*/false);
  REQUIRE(plain.has_value());
  REQUIRE(mixed.has_value());
  CHECK(mixed->encoder_tokens == plain->encoder_tokens);
  CHECK(mixed->target == plain->target);
  CHECK(mixed->retrieval_query == plain->retrieval_query);
  CHECK(mixed->objective == Objective::mix);
}

TEST_CASE("corruption skips degenerate sequences and rejects bad rates",
          "[corruption]") {
  Rng rng = make_rng(16);
  auto short7 = random_tokens(rng, 7);
  auto len8 = random_tokens(rng, 8);
  auto len9 = random_tokens(rng, 9);
  auto len10 = random_tokens(rng, 10);
  CHECK(!mask_spans(short7, rng).has_value());
  CHECK(mask_spans(len8, rng).has_value());
  CHECK(!mask_suffix(len9, rng).has_value());
  CHECK(mask_suffix(len10, rng).has_value());
  CHECK(!mix_corrupt(len9, rng).has_value());
  CHECK(mix_corrupt(len10, rng).has_value());

  CHECK_THROWS_AS(mask_spans(len10, 1.0, 3.0, rng), Error);
  CHECK_THROWS_AS(mask_spans(len10, -0.1, 3.0, rng), Error);
  CHECK_THROWS_AS(mask_spans(len10, 0.15, 0.5, rng), Error);
  CHECK_THROWS_AS(mask_suffix(len10, 0.0, rng), Error);
  CHECK_THROWS_AS(mask_suffix(len10, 1.0, rng), Error);
}

TEST_CASE("zero mask rate leaves the input unchanged", "[corruption]") {
  Rng rng = make_rng(17);
  auto tokens = random_tokens(rng, 32);
  auto s = mask_spans(tokens, 0.0, 3.0, rng);
  REQUIRE(s.has_value());
  CHECK(s->encoder_tokens == tokens);
  CHECK(s->target.empty());
  CHECK(s->retrieval_query == tokens);
}

TEST_CASE("corruption is deterministic under a seed", "[corruption]") {
  Rng r1 = make_rng(18), r2 = make_rng(18), r3 = make_rng(19);
  auto tokens = random_tokens(r1, 80);
  (void)random_tokens(r2, 80);
  (void)random_tokens(r3, 80);
  auto a = mask_spans(tokens, r1);
  auto b = mask_spans(tokens, r2);
  auto c = mask_spans(tokens, r3);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  REQUIRE(c.has_value());
  CHECK(a->encoder_tokens == b->encoder_tokens);
  CHECK(a->target == b->target);
  CHECK(a->encoder_tokens != c->encoder_tokens);
}

TEST_CASE("synthetic corpus is reproducible and well formed", "[synthetic]") {
  auto w1 = make_synthetic_corpus(30, 4, 7);
  auto w2 = make_synthetic_corpus(30, 4, 7);
  auto w3 = make_synthetic_corpus(30, 4, 8);
  CHECK(encode_corpus(w1.corpus) == encode_corpus(w2.corpus));
  CHECK(encode_qa(w1.qa) == encode_qa(w2.qa));
  CHECK(encode_corpus(w1.corpus) != encode_corpus(w3.corpus));

  REQUIRE(w1.corpus.size() == 30);
  REQUIRE(w1.qa.size() == 30 * 4);
  std::set<std::string> titles;
  for (const auto& p : w1.corpus) titles.insert(p.title);
  CHECK(titles.size() == 30);  // names are distinct even though words repeat
}

TEST_CASE("every synthetic answer appears verbatim in exactly one passage",
          "[synthetic]") {
  auto w = make_synthetic_corpus(40, 5, 21);
  for (const auto& qa : w.qa) {
    int hits = 0;
    int64_t home = -1;
    for (const auto& p : w.corpus) {
      std::string padded = " " + p.text + " ";
      if (padded.find(" " + qa.answer + " ") != std::string::npos) {
        ++hits;
        home = p.id;
      }
    }
    REQUIRE(hits == 1);
    // and that passage is the one for the entity named in the question
    std::string q_padded = " " + qa.question + " ";
    CHECK(q_padded.find(" " + w.corpus[home].title + " ") != std::string::npos);
  }
}

TEST_CASE("synthetic QA pairs carry both train and heldout splits",
          "[synthetic]") {
  auto w = make_synthetic_corpus(50, 4, 33, 0.3);
  int held = 0;
  for (const auto& qa : w.qa) {
    REQUIRE((qa.split == "train" || qa.split == "heldout"));
    if (qa.split == "heldout") ++held;
  }
  double frac = double(held) / double(w.qa.size());
  CHECK_THAT(frac, Catch::Matchers::WithinAbs(0.3, 0.1));
  CHECK(held > 0);
  CHECK(held < static_cast<int>(w.qa.size()));
}

TEST_CASE("synthetic namespace limits raise config errors", "[synthetic]") {
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;  // anything not Config fails the check below
  };
  CHECK(kind_of([] { make_synthetic_corpus(50 * 50 + 1, 2, 1); }) ==
        ErrorKind::Config);
  CHECK(kind_of([] { make_synthetic_corpus(10, 17, 1); }) == ErrorKind::Config);
  CHECK(kind_of([] { make_synthetic_corpus(0, 2, 1); }) == ErrorKind::Config);
  CHECK(kind_of([] { make_synthetic_corpus(10, 2, 1, 1.5); }) ==
        ErrorKind::Config);
}

TEST_CASE("synthetic text cooperates with the tokenizer and corruption",
          "[synthetic]") {
  auto w = make_synthetic_corpus(12, 3, 5);
  std::vector<std::string> texts;
  for (const auto& p : w.corpus) texts.push_back(p.title + " " + p.text);
  for (const auto& qa : w.qa) texts.push_back(qa.question + " " + qa.answer);
  Tokenizer tok = Tokenizer::build(texts);
  // answers are single in-vocabulary tokens, questions have no <unk>
  for (const auto& qa : w.qa) {
    auto ans = tok.encode(qa.answer);
    REQUIRE(ans.size() == 1);
    CHECK(ans[0] >= Tokenizer::kReservedCount);
    for (int t : tok.encode(qa.question)) CHECK(t != Tokenizer::kUnk);
  }
  // passages are long enough to corrupt, and corruption round-trips
  Rng rng = make_rng(99);
  for (const auto& p : w.corpus) {
    auto tokens = tok.encode(p.text);
    REQUIRE(tokens.size() >= 10);
    auto s = mix_corrupt(tokens, rng);
    REQUIRE(s.has_value());
    CHECK(splice_reconstruct(*s) == tokens);
  }
}
