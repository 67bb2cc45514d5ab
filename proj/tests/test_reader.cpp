#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "raven/reader.hpp"
#include "testutil.hpp"

using namespace raven;

namespace {

ReaderConfig tiny_config() {
  ReaderConfig cfg;
  cfg.vocab_size = 30;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 32;
  cfg.max_encoder_len = 48;
  cfg.max_decoder_len = 16;
  return cfg;
}

std::vector<int> random_tokens(Rng& rng, int len, int vocab) {
  std::vector<int> t(len);
  for (auto& x : t) x = static_cast<int>(uniform_int(rng, 3, vocab - 1));
  return t;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("config validation rejects bad geometry", "[reader]") {
  ReaderConfig cfg = tiny_config();
  cfg.d_model = 15;  // not divisible by 2 heads
  REQUIRE_THROWS_AS(Reader(cfg, 1), Error);
  cfg = tiny_config();
  cfg.vocab_size = 0;
  REQUIRE_THROWS_AS(Reader(cfg, 1), Error);
  cfg = tiny_config();
  cfg.dropout = 1.0;
  REQUIRE_THROWS_AS(Reader(cfg, 1), Error);
}

TEST_CASE("encodings are independent across passages", "[reader]") {
  Reader reader(tiny_config(), 7);
  Rng rng = make_rng(100);
  std::vector<int> p0 = random_tokens(rng, 6, 30);
  std::vector<int> p1 = random_tokens(rng, 9, 30);
  std::vector<int> p2 = random_tokens(rng, 4, 30);

  auto all = reader.encode_passages({p0, p1, p2});
  REQUIRE(all.size() == 3);
  REQUIRE(all[1].passage_index == 1);
  REQUIRE(all[0].hidden.shape() == Shape{6, 16});

  // editing passage 1 leaves encodings 0 and 2 bit-identical
  std::vector<int> p1_edit = p1;
  p1_edit[2] = (p1_edit[2] + 1) % 30;
  auto edited = reader.encode_passages({p0, p1_edit, p2});
  REQUIRE(edited[0].hidden.data() == all[0].hidden.data());
  REQUIRE(edited[2].hidden.data() == all[2].hidden.data());
  REQUIRE(edited[1].hidden.data() != all[1].hidden.data());

  // single-passage encoding equals its slot in the fan-out
  auto solo = reader.encode_passages({p1});
  REQUIRE(solo[0].hidden.data() == all[1].hidden.data());
}

TEST_CASE("self-attention work counts score-matrix entries per passage",
          "[reader]") {
  ReaderConfig cfg = tiny_config();
  cfg.n_heads = 1;
  cfg.n_enc_layers = 1;  // counter equals sum of len^2 exactly
  cfg.max_encoder_len = 64;
  Reader reader(cfg, 3);
  Rng rng = make_rng(5);
  std::vector<int> a = random_tokens(rng, 5, 30);
  std::vector<int> b = random_tokens(rng, 7, 30);
  std::vector<int> c = random_tokens(rng, 9, 30);

  reset_attention_work();
  reader.encode_passages({a, b, c});
  REQUIRE(attention_work().self_entries.load() == 25 + 49 + 81);
  REQUIRE(attention_work().cross_entries.load() == 0);

  // the concatenation baseline pays the quadratic price
  std::vector<int> concat = a;
  concat.insert(concat.end(), b.begin(), b.end());
  concat.insert(concat.end(), c.begin(), c.end());
  reset_attention_work();
  reader.encode_passages({concat});
  REQUIRE(attention_work().self_entries.load() == 21 * 21);
  reset_attention_work();
}

TEST_CASE("decoder logits are invariant to passage permutation", "[reader]") {
  Reader reader(tiny_config(), 11);
  Rng rng = make_rng(200);
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < 4; ++i)
    prompts.push_back(random_tokens(rng, 5 + i, 30));
  std::vector<int> dec = random_tokens(rng, 4, 30);

  auto enc = reader.encode_passages(prompts);
  Tensor base = reader.decode_logits(enc, dec);

  std::vector<EncodedPassage> shuffled{enc[2], enc[0], enc[3], enc[1]};
  Tensor permuted = reader.decode_logits(shuffled, dec);
  REQUIRE(max_abs_diff(base.data(), permuted.data()) < 1e-9);
}

TEST_CASE("padding positions cannot influence logits", "[reader]") {
  Reader reader(tiny_config(), 13);
  Rng rng = make_rng(300);
  std::vector<int> words = random_tokens(rng, 5, 30);
  std::vector<int> padded = words;
  padded.push_back(0);
  padded.push_back(0);

  auto clean = reader.encode_passages({words});
  auto pad_enc = reader.encode_passages({padded});
  REQUIRE(pad_enc[0].mask ==
          std::vector<uint8_t>{1, 1, 1, 1, 1, 0, 0});
  // real-token rows are bit-identical with and without trailing padding
  for (int64_t r = 0; r < 5; ++r)
    for (int64_t j = 0; j < 16; ++j)
      REQUIRE(pad_enc[0].hidden.data()[r * 16 + j] ==
              clean[0].hidden.data()[r * 16 + j]);

  std::vector<int> dec = random_tokens(rng, 3, 30);
  Tensor base = reader.decode_logits(pad_enc, dec);
  REQUIRE(reader.decode_logits(clean, dec).data() == base.data());

  // scribbling over the masked hidden rows changes nothing downstream
  auto scribbled = pad_enc;
  for (int64_t r = 5; r < 7; ++r)
    for (int64_t j = 0; j < 16; ++j)
      scribbled[0].hidden.mutable_data()[r * 16 + j] = 1e6;
  REQUIRE(reader.decode_logits(scribbled, dec).data() == base.data());
}

TEST_CASE("reader reports length violations with the passage index",
          "[reader]") {
  Reader reader(tiny_config(), 17);
  Rng rng = make_rng(400);
  std::vector<int> ok = random_tokens(rng, 5, 30);
  std::vector<int> huge = random_tokens(rng, 49, 30);
  try {
    reader.encode_passages({ok, huge});
    FAIL("expected length error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Length);
    REQUIRE(std::string(e.what()).find("passage 1") != std::string::npos);
  }

  auto enc = reader.encode_passages({ok});
  REQUIRE_THROWS_AS(reader.decode_logits({}, ok), Error);
  std::vector<int> long_dec = random_tokens(rng, 17, 30);
  try {
    reader.decode_logits(enc, long_dec);
    FAIL("expected length error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Length);
  }
}

TEST_CASE("log_likelihood matches a per-token oracle and the training loss",
          "[reader]") {
  Reader reader(tiny_config(), 19);
  Rng rng = make_rng(500);
  std::vector<std::vector<int>> prompts{random_tokens(rng, 6, 30),
                                        random_tokens(rng, 8, 30)};
  std::vector<int> answer = random_tokens(rng, 4, 30);
  answer.back() = 1;  // ends with eos

  double ll = reader.log_likelihood(prompts, answer);
  REQUIRE(ll <= 0.0);

  // oracle: recompute from raw logits row by row
  NoGradGuard ng;
  Tensor logits = reader.decode_logits(reader.encode_passages(prompts),
                                       Reader::teacher_input(answer));
  double want = 0.0;
  for (size_t i = 0; i < answer.size(); ++i) {
    double mx = -1e300, lse = 0.0;
    for (int64_t j = 0; j < 30; ++j)
      mx = std::max(mx, logits.data()[i * 30 + j]);
    for (int64_t j = 0; j < 30; ++j)
      lse += std::exp(logits.data()[i * 30 + j] - mx);
    want += logits.data()[i * 30 + answer[i]] - (mx + std::log(lse));
  }
  REQUIRE(testutil::rel_err(ll, want) < 1e-10);

  // mean cross entropy recombines to the negated sum
  double nll = reader.nll_loss(prompts, answer).item();
  REQUIRE(testutil::rel_err(nll * double(answer.size()), -ll) < 1e-9);

  // appending a token never increases the value
  std::vector<int> longer = answer;
  longer.push_back(5);
  REQUIRE(reader.log_likelihood(prompts, longer) <= ll + 1e-12);

  // single-passage scoring is the one-passage likelihood by definition
  REQUIRE(reader.score_answer_per_passage(prompts[0], answer) ==
          reader.log_likelihood({prompts[0]}, answer));
}

TEST_CASE("uniform logits give the closed-form likelihood", "[reader]") {
  Reader reader(tiny_config(), 23);
  // the output head is tied to the token embedding, so zeroing the embedding
  // makes every vocabulary item equally likely
  auto& head = reader.params().get("reader.tok_emb");
  std::fill(head.mutable_data().begin(), head.mutable_data().end(), 0.0);
  Rng rng = make_rng(600);
  std::vector<std::vector<int>> prompts{random_tokens(rng, 5, 30)};
  double ll = reader.log_likelihood(prompts, {4, 9, 1});
  REQUIRE(std::abs(ll - 3.0 * (-std::log(30.0))) < 1e-12);
}

TEST_CASE("greedy generation is deterministic, capped and tie-stable",
          "[reader]") {
  Reader reader(tiny_config(), 29);
  Rng rng = make_rng(700);
  std::vector<std::vector<int>> prompts{random_tokens(rng, 7, 30)};

  std::vector<int> a = reader.generate_greedy(prompts, 5, {3});
  std::vector<int> b = reader.generate_greedy(prompts, 5, {3});
  REQUIRE(a == b);
  REQUIRE(a.size() <= 6);  // prime + at most 5 new tokens
  REQUIRE(a.front() == 3);
  REQUIRE_THROWS_AS(reader.generate_greedy(prompts, 0), Error);

  // zeroing the tied embedding ties every logit; the argmax must pick id 0
  auto& head = reader.params().get("reader.tok_emb");
  std::fill(head.mutable_data().begin(), head.mutable_data().end(), 0.0);
  std::vector<int> tied = reader.generate_greedy(prompts, 3);
  REQUIRE(tied == std::vector<int>{0, 0, 0});
}

TEST_CASE("dropout splits training and evaluation behaviour", "[reader]") {
  ReaderConfig cfg = tiny_config();
  cfg.dropout = 0.2;
  Reader reader(cfg, 31);
  Rng rng = make_rng(800);
  std::vector<std::vector<int>> prompts{random_tokens(rng, 6, 30)};
  std::vector<int> answer{4, 7, 1};

  // evaluation path is deterministic
  REQUIRE(reader.log_likelihood(prompts, answer) ==
          reader.log_likelihood(prompts, answer));

  // training path with identical generator state reproduces, fresh state varies
  Rng d1 = make_rng(9), d2 = make_rng(9), d3 = make_rng(10);
  double l1 = reader.nll_loss(prompts, answer, &d1).item();
  double l2 = reader.nll_loss(prompts, answer, &d2).item();
  double l3 = reader.nll_loss(prompts, answer, &d3).item();
  REQUIRE(l1 == l2);
  REQUIRE(l1 != l3);
}

TEST_CASE("full reader loss passes a sampled gradient check", "[reader]") {
  ReaderConfig cfg = tiny_config();
  cfg.vocab_size = 24;
  Reader reader(cfg, 37);
  Rng rng = make_rng(900);
  std::vector<std::vector<int>> prompts{random_tokens(rng, 5, 24),
                                        random_tokens(rng, 6, 24)};
  std::vector<int> answer{5, 11, 1};

  std::vector<Tensor> leaves;
  for (auto& [name, t] : reader.params()) leaves.push_back(t);
  Rng pick = make_rng(901);
  testutil::check_grads_sampled(
      [&] { return reader.nll_loss(prompts, answer); }, leaves, 4, pick, 1e-5,
      1e-3);
}
