#pragma once

// Prompt assembly for in-context learning. Two strategies: S1 puts example
// QA pairs, the target question and the passage all in the encoder; S2 moves
// the example answers to the decoder behind matching sentinels. Fusion-in-
// context sharding hands each passage its own slice of the example pool so
// the model sees many demonstrations without any single input growing.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "raven/corpus.hpp"
#include "raven/error.hpp"
#include "raven/retriever.hpp"
#include "raven/rng.hpp"
#include "raven/tokenizer.hpp"

namespace raven {

struct Example {
  std::string question;
  std::string answer;
};

struct TargetQuery {
  std::string question;
  std::vector<std::string> gold_answers;  // optional, used by evaluation
};

enum class TargetPosition { first, random, last };
enum class PromptStrategy { s1, s2 };
enum class AssemblyMode { standard, ficl };

inline const char* position_name(TargetPosition p) {
  switch (p) {
    case TargetPosition::first: return "first";
    case TargetPosition::random: return "random";
    default: return "last";
  }
}

struct FiCLConfig {
  int64_t k_shot = 0;
  int64_t m_fusion = 1;
  int64_t n_passages = 1;
  uint64_t seed = 0;

  void validate() const {
    require(k_shot >= 0, ErrorKind::Config, "ficl: k_shot must be >= 0");
    require(m_fusion >= 1 && m_fusion <= std::max<int64_t>(k_shot, 1),
            ErrorKind::Config, "ficl: need 1 <= m_fusion <= max(k_shot,1)");
    require(n_passages >= 1, ErrorKind::Config, "ficl: n_passages must be >= 1");
  }
};

struct PromptAssembly {
  std::vector<std::vector<int>> encoder_tokens;  // one sequence per passage
  std::vector<std::string> encoder_texts;        // parallel rendering, for audit
  std::vector<int> decoder_tokens;               // S2 priming; empty for S1
  std::string decoder_text;
  TargetPosition position = TargetPosition::last;
  PromptStrategy strategy = PromptStrategy::s1;
};

namespace detail {

inline std::string example_block(const Example& e) {
  require(!e.question.empty() && !e.answer.empty(), ErrorKind::Contract,
          "prompt example with empty question or answer");
  return "Question: " + e.question + " Answer: " + e.answer;
}

inline std::string target_block(const TargetQuery& t, int sentinel_index) {
  require(!t.question.empty(), ErrorKind::Contract, "empty target question");
  return "Question: " + t.question +
         " Answer:" + Tokenizer::sentinel_text(sentinel_index);
}

inline std::string passage_block(const Passage& p) {
  return "title: " + p.title + " context: " + p.text;
}

inline size_t target_slot(size_t k, TargetPosition pos, Rng* rng) {
  switch (pos) {
    case TargetPosition::first:
      return 0;
    case TargetPosition::random:
      require(rng != nullptr, ErrorKind::Contract,
              "random target position needs an rng");
      return static_cast<size_t>(uniform_int(*rng, 0, int64_t(k)));
    default:
      return k;
  }
}

inline std::vector<int> encode_checked(const Tokenizer& tok,
                                       const std::string& text,
                                       int64_t max_encoder_len,
                                       const std::string& what) {
  std::vector<int> ids = tok.encode(text);
  require(static_cast<int64_t>(ids.size()) <= max_encoder_len,
          ErrorKind::Length,
          what + " overflows the encoder: " + std::to_string(ids.size()) +
              " tokens > max " + std::to_string(max_encoder_len));
  return ids;
}

}  // namespace detail

// "Question: q1 Answer: a1 ... Question: q0 Answer:<extra_id_0> title: {title}
// context: {text}"; position first/random moves the target QA block while the
// passage stays in the final slot.
inline std::string render_prompt_s1(const std::vector<Example>& examples,
                                    const TargetQuery& target,
                                    const Passage& passage,
                                    TargetPosition pos = TargetPosition::last,
                                    Rng* rng = nullptr) {
  size_t slot = detail::target_slot(examples.size(), pos, rng);
  std::vector<std::string> blocks;
  for (const auto& e : examples) blocks.push_back(detail::example_block(e));
  blocks.insert(blocks.begin() + static_cast<int64_t>(slot),
                detail::target_block(target, 0));
  std::string out;
  for (const auto& b : blocks) {
    if (!out.empty()) out += " ";
    out += b;
  }
  return out + " " + detail::passage_block(passage);
}

// Encoder: "Question: q1 Answer:<extra_id_0> ... Question: q0 Answer:
// <extra_id_k> title: ... context: ..."; decoder primes the example answers
// "<extra_id_0> a1 ... <extra_id_{k-1}> ak" and the model must continue with
// <extra_id_k>.
inline std::pair<std::string, std::string> render_prompt_s2(
    const std::vector<Example>& examples, const TargetQuery& target,
    const Passage& passage) {
  std::string enc;
  for (size_t i = 0; i < examples.size(); ++i) {
    require(!examples[i].question.empty() && !examples[i].answer.empty(),
            ErrorKind::Contract, "prompt example with empty question or answer");
    enc += "Question: " + examples[i].question +
           " Answer:" + Tokenizer::sentinel_text(static_cast<int>(i)) + " ";
  }
  enc += detail::target_block(target, static_cast<int>(examples.size()));
  enc += " " + detail::passage_block(passage);
  std::string dec;
  for (size_t i = 0; i < examples.size(); ++i) {
    if (!dec.empty()) dec += " ";
    dec += Tokenizer::sentinel_text(static_cast<int>(i)) + " " +
           examples[i].answer;
  }
  return {enc, dec};
}

// Multiple-choice rendering: options labelled (A)-(D) in the given order.
inline std::string render_prompt_mc(const std::string& question,
                                    const std::array<std::string, 4>& options,
                                    const Passage& passage) {
  require(!question.empty(), ErrorKind::Contract, "empty target question");
  static const char* kLetters[4] = {"A", "B", "C", "D"};
  std::string opts;
  for (int i = 0; i < 4; ++i) {
    require(!options[i].empty(), ErrorKind::Contract,
            "multiple-choice option is empty");
    if (i) opts += " ";
    opts += std::string("(") + kLetters[i] + ") " + options[i];
  }
  return "Question: " + question + " Options: " + opts +
         " Answer:" + Tokenizer::sentinel_text(0) + " " +
         detail::passage_block(passage);
}

inline std::vector<int> build_prompt_s1(const Tokenizer& tok,
                                        const std::vector<Example>& examples,
                                        const TargetQuery& target,
                                        const Passage& passage,
                                        int64_t max_encoder_len,
                                        TargetPosition pos = TargetPosition::last,
                                        Rng* rng = nullptr) {
  return detail::encode_checked(
      tok, render_prompt_s1(examples, target, passage, pos, rng),
      max_encoder_len, "prompt");
}

inline std::pair<std::vector<int>, std::vector<int>> build_prompt_s2(
    const Tokenizer& tok, const std::vector<Example>& examples,
    const TargetQuery& target, const Passage& passage,
    int64_t max_encoder_len) {
  auto [enc, dec] = render_prompt_s2(examples, target, passage);
  return {detail::encode_checked(tok, enc, max_encoder_len, "prompt"),
          tok.encode(dec)};
}

// Walk a shuffled cycle over the pool, m examples per shard, reshuffling on
// exhaustion. A reshuffle whose head would repeat an example already in the
// crossing shard is rejected, so shards never contain duplicates and each
// cycle covers the pool exactly once.
inline std::vector<std::vector<Example>> ficl_shards(
    const std::vector<Example>& pool, int64_t m, int64_t n, uint64_t seed) {
  require(!pool.empty(), ErrorKind::Config, "ficl_shards: empty example pool");
  int64_t k = static_cast<int64_t>(pool.size());
  require(m >= 1 && m <= k, ErrorKind::Config,
          "ficl_shards: m=" + std::to_string(m) + " outside [1, pool size " +
              std::to_string(k) + "]");
  require(n >= 1, ErrorKind::Config, "ficl_shards: need n >= 1");

  Rng rng = make_rng(mix_seed(seed, 0x6669636cULL));
  std::vector<int64_t> order(k);
  for (int64_t i = 0; i < k; ++i) order[i] = i;
  shuffle_vec(order, rng);

  std::vector<std::vector<Example>> shards;
  int64_t pos = 0;
  for (int64_t s = 0; s < n; ++s) {
    std::vector<int64_t> ids;
    while (static_cast<int64_t>(ids.size()) < m) {
      if (pos == k) {
        // reshuffle; reject orders whose head duplicates the partial shard
        int64_t need = m - static_cast<int64_t>(ids.size());
        for (int attempt = 0;; ++attempt) {
          require(attempt < 10000, ErrorKind::Contract,
                  "ficl_shards: could not reshuffle without duplicates");
          shuffle_vec(order, rng);
          bool clash = false;
          for (int64_t j = 0; j < need && !clash; ++j)
            for (int64_t id : ids)
              if (order[j] == id) { clash = true; break; }
          if (!clash) break;
        }
        pos = 0;
      }
      ids.push_back(order[pos++]);
    }
    std::vector<Example> shard;
    for (int64_t id : ids) shard.push_back(pool[id]);
    shards.push_back(std::move(shard));
  }
  return shards;
}

// Per-passage encoder inputs: standard mode repeats the same example list for
// every passage; ficl mode gives passage i shard i. m_fusion == k_shot is the
// degenerate case where every shard would be the whole pool, so it falls back
// to standard mode byte for byte.
inline PromptAssembly assemble_fid_inputs(
    const Tokenizer& tok, AssemblyMode mode,
    const std::vector<Example>& examples, const TargetQuery& target,
    const std::vector<Passage>& passages, const FiCLConfig& ficl,
    int64_t max_encoder_len, TargetPosition pos = TargetPosition::last,
    PromptStrategy strategy = PromptStrategy::s1, Rng* rng = nullptr) {
  ficl.validate();
  require(static_cast<int64_t>(passages.size()) == ficl.n_passages,
          ErrorKind::Contract,
          "assemble_fid_inputs: " + std::to_string(passages.size()) +
              " passages for n_passages=" + std::to_string(ficl.n_passages));
  require(strategy == PromptStrategy::s1 || mode == AssemblyMode::standard,
          ErrorKind::Config,
          "assemble_fid_inputs: fusion-in-context sharding requires strategy 1");
  require(mode == AssemblyMode::standard ||
              static_cast<int64_t>(examples.size()) == ficl.k_shot,
          ErrorKind::Contract,
          "assemble_fid_inputs: example pool size " +
              std::to_string(examples.size()) + " != k_shot " +
              std::to_string(ficl.k_shot));

  PromptAssembly out;
  out.position = pos;
  out.strategy = strategy;

  std::vector<std::vector<Example>> per_passage;
  if (mode == AssemblyMode::ficl && ficl.k_shot > 0 &&
      ficl.m_fusion < ficl.k_shot) {
    per_passage =
        ficl_shards(examples, ficl.m_fusion, ficl.n_passages, ficl.seed);
  } else {
    per_passage.assign(passages.size(), examples);
  }

  if (strategy == PromptStrategy::s2) {
    out.decoder_text = render_prompt_s2(examples, target, passages[0]).second;
    out.decoder_tokens = tok.encode(out.decoder_text);
  }

  for (size_t i = 0; i < passages.size(); ++i) {
    std::string text;
    if (strategy == PromptStrategy::s1) {
      text = render_prompt_s1(per_passage[i], target, passages[i], pos, rng);
    } else {
      text = render_prompt_s2(per_passage[i], target, passages[i]).first;
    }
    out.encoder_tokens.push_back(detail::encode_checked(
        tok, text, max_encoder_len, "passage " + std::to_string(i)));
    out.encoder_texts.push_back(std::move(text));
  }
  return out;
}

// Top-k training questions closest to the target question, mapped back to
// their QA pairs. The index must have been built over the question texts,
// one row per QA pair, ids matching positions in `qa`.
inline std::vector<Example> retrieve_in_context_examples(
    const Retriever& retriever, const Tokenizer& tok, const VectorIndex& index,
    const std::vector<QaPair>& qa, const TargetQuery& target, int k,
    int64_t exclude_id = -1) {
  require(index.count() > 0, ErrorKind::Config,
          "retrieve_in_context_examples: empty example index");
  require(static_cast<size_t>(index.count()) == qa.size(), ErrorKind::Contract,
          "retrieve_in_context_examples: index size " +
              std::to_string(index.count()) + " != qa size " +
              std::to_string(qa.size()));
  require(k >= 1 && k <= static_cast<int>(index.count()), ErrorKind::Config,
          "retrieve_in_context_examples: k=" + std::to_string(k) +
              " outside [1, " + std::to_string(index.count()) + "]");
  NoGradGuard ng;
  Tensor q = retriever.embed_text(tok.encode(target.question));
  ScoredPassageSet hits = retrieve_top_k(q.data(), index, k, exclude_id);
  std::vector<Example> out;
  for (const auto& [id, score] : hits.hits) {
    (void)score;
    out.push_back({qa[static_cast<size_t>(id)].question,
                   qa[static_cast<size_t>(id)].answer});
  }
  return out;
}

// Question-text index over QA pairs for in-context example retrieval.
inline VectorIndex build_example_index(const Retriever& retriever,
                                       const Tokenizer& tok,
                                       const std::vector<QaPair>& qa) {
  require(!qa.empty(), ErrorKind::Config, "build_example_index: no QA pairs");
  Corpus questions;
  std::vector<std::vector<int>> texts;
  for (size_t i = 0; i < qa.size(); ++i) {
    Passage p;
    p.id = static_cast<int64_t>(i);
    p.text = qa[i].question;  // questions only: answers must not leak in
    questions.push_back(std::move(p));
    texts.push_back(tok.encode(qa[i].question));
  }
  return retriever.refresh_index(questions, texts);
}

// Demonstrations for multiple-choice sweeps: keep only short questions.
inline std::vector<Example> filter_demonstrations(
    const std::vector<Example>& pool, const Tokenizer& tok,
    int64_t max_question_tokens = 50) {
  std::vector<Example> out;
  for (const auto& e : pool)
    if (static_cast<int64_t>(tok.encode(e.question).size()) <
        max_question_tokens)
      out.push_back(e);
  return out;
}

// Audit dump: one JSON line per encoder sequence.
inline std::string encode_prompt_dump(const PromptAssembly& assembly,
                                      const std::string& mode) {
  std::string out;
  for (size_t i = 0; i < assembly.encoder_texts.size(); ++i) {
    nlohmann::json j;
    j["mode"] = mode;
    j["shard_index"] = i;
    j["encoder_text"] = assembly.encoder_texts[i];
    if (!assembly.decoder_text.empty()) j["decoder_text"] = assembly.decoder_text;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace raven
