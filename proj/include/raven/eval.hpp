#pragma once

// Evaluation: answer normalization and match metrics, sweep drivers over
// shots / passages / position / mode, de-biased multiple choice, and the
// fused-vs-concatenated attention cost benchmark.

#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "raven/corpus.hpp"
#include "raven/error.hpp"
#include "raven/prompting.hpp"
#include "raven/reader.hpp"
#include "raven/retriever.hpp"
#include "raven/rng.hpp"
#include "raven/tokenizer.hpp"

namespace raven {

// ---------------------------------------------------------------------------
// Match metrics
// ---------------------------------------------------------------------------

// Lowercase, drop punctuation, drop articles, collapse whitespace.
inline std::string normalize_answer(const std::string& s) {
  std::string lowered;
  for (char c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      lowered += static_cast<char>(std::tolower(u));
    else if (std::isspace(u))
      lowered += ' ';
    // punctuation disappears entirely
  }
  std::string out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (word != "a" && word != "an" && word != "the") {
      if (!out.empty()) out += ' ';
      out += word;
    }
    word.clear();
  };
  for (char c : lowered) {
    if (c == ' ')
      flush();
    else
      word += c;
  }
  flush();
  return out;
}

inline bool exact_match(const std::string& prediction,
                        const std::vector<std::string>& golds) {
  require(!golds.empty(), ErrorKind::Contract, "exact_match: no gold answers");
  std::string p = normalize_answer(prediction);
  for (const auto& g : golds)
    if (p == normalize_answer(g)) return true;
  return false;
}

inline bool substring_match(const std::string& prediction,
                            const std::vector<std::string>& golds) {
  require(!golds.empty(), ErrorKind::Contract,
          "substring_match: no gold answers");
  std::string p = normalize_answer(prediction);
  for (const auto& g : golds) {
    if (p.find(normalize_answer(g)) != std::string::npos) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// De-biased multiple choice
// ---------------------------------------------------------------------------

struct MultipleChoiceItem {
  std::string question;
  std::array<std::string, 4> options;
  int gold = 0;  // index into options

  void validate() const {
    require(!question.empty(), ErrorKind::Contract, "mc item: empty question");
    for (const auto& o : options)
      require(!o.empty(), ErrorKind::Contract, "mc item: empty option");
    require(gold >= 0 && gold < 4, ErrorKind::Contract,
            "mc item: gold index outside A-D");
  }
};

// Four passes, rotating which letter each option sits behind; option o sits at
// letter (o + r) % 4 in pass r. Per-option scores are the four letter
// probabilities it collected, summed in sorted order so the result is exactly
// invariant under relabeling of the input. Ties break to the lowest letter.
template <typename ScoreFn>
int debiased_multiple_choice(const MultipleChoiceItem& item, ScoreFn&& score) {
  item.validate();
  std::array<std::array<double, 4>, 4> addends{};  // [option][rotation]
  for (int r = 0; r < 4; ++r) {
    std::array<std::string, 4> shown;
    for (int letter = 0; letter < 4; ++letter)
      shown[letter] = item.options[static_cast<size_t>((letter - r + 4) % 4)];
    std::array<double, 4> probs = score(item.question, shown);
    for (int o = 0; o < 4; ++o) addends[o][r] = probs[(o + r) % 4];
  }
  int best = 0;
  double best_sum = -1.0;
  for (int o = 0; o < 4; ++o) {
    std::array<double, 4> a = addends[o];
    std::sort(a.begin(), a.end());
    double sum = a[0] + a[1] + a[2] + a[3];
    if (sum > best_sum) {
      best_sum = sum;
      best = o;
    }
  }
  return best;
}

// Letter-token probabilities from the reader: one forward pass per rotation,
// reading the softmax mass on the tokens "a".."d" right after the sentinel.
inline std::array<double, 4> mc_letter_probs(
    const Reader& reader, const Tokenizer& tok,
    const std::vector<std::vector<int>>& prompts) {
  std::array<int, 4> letter_ids{};
  const char* letters[4] = {"a", "b", "c", "d"};
  for (int i = 0; i < 4; ++i) {
    std::vector<int> ids = tok.encode(letters[i]);
    require(ids.size() == 1 && ids[0] != Tokenizer::kUnk, ErrorKind::Contract,
            std::string("mc scoring: letter '") + letters[i] +
                "' is not a vocabulary token");
    letter_ids[i] = ids[0];
  }
  NoGradGuard ng;
  Tensor logits = reader.decode_logits(
      reader.encode_passages(prompts),
      {Reader::kDecoderStart, Tokenizer::sentinel_id(0)});
  int64_t v = logits.dim(1);
  const double* row = logits.data().data() + v;  // position after the sentinel
  double mx = row[0];
  for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
  double lse = 0.0;
  for (int64_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
  std::array<double, 4> out{};
  for (int i = 0; i < 4; ++i)
    out[i] = std::exp(row[letter_ids[i]] - mx) / lse;
  return out;
}

// ---------------------------------------------------------------------------
// QA sweep driver
// ---------------------------------------------------------------------------

struct EvalRecord {
  int64_t query_id = 0;
  std::string prediction;
  std::vector<std::string> golds;
  bool em = false;
  bool substring = false;
  int64_t shots = 0;
  int64_t passages = 0;
  std::string mode;
  std::string position;
};

struct SweepConfig {
  int64_t shots = 0;
  int64_t n_passages = 5;
  TargetPosition position = TargetPosition::last;
  AssemblyMode mode = AssemblyMode::standard;
  int64_t m_fusion = 0;  // 0 means m = shots (plain fusion off)
  bool retrieve_examples = false;
  int max_new_tokens = 8;
  uint64_t seed = 0;

  std::string mode_label() const {
    if (mode == AssemblyMode::standard) return "standard";
    int64_t m = m_fusion > 0 ? m_fusion : shots;
    return "ficl [" + std::to_string(shots) + "-" + std::to_string(m) + "]";
  }
};

struct EvalOutcome {
  std::vector<EvalRecord> records;
  int64_t skipped = 0;  // prompt overflows
  double em = 0.0;
  double substring = 0.0;
};

namespace detail {

inline std::string decode_generated(const Tokenizer& tok,
                                    const std::vector<int>& ids) {
  std::vector<int> keep;
  for (int id : ids) {
    if (id == Tokenizer::kEos) break;
    if (!Tokenizer::is_sentinel(id)) keep.push_back(id);
  }
  return tok.decode(keep);
}

inline std::vector<Example> sample_examples(const std::vector<QaPair>& pool,
                                            int64_t k, Rng& rng) {
  require(k <= static_cast<int64_t>(pool.size()), ErrorKind::Config,
          "sweep: fewer training QA pairs than requested shots");
  std::vector<int64_t> ids(pool.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i);
  shuffle_vec(ids, rng);
  std::vector<Example> out;
  for (int64_t i = 0; i < k; ++i)
    out.push_back({pool[static_cast<size_t>(ids[i])].question,
                   pool[static_cast<size_t>(ids[i])].answer});
  return out;
}

}  // namespace detail

// Evaluate every QA pair: retrieve passages for the question, assemble the
// per-passage prompts, greedy-decode past the sentinel, and score the answer.
// Prompt overflows are recorded as skips rather than aborting the sweep.
inline EvalOutcome evaluate_dataset(
    const Reader& reader, const Retriever& retriever, const Tokenizer& tok,
    const VectorIndex& index, const std::vector<QaPair>& eval_set,
    const std::vector<QaPair>& train_pool, const SweepConfig& cfg,
    const VectorIndex* example_index = nullptr) {
  require(!eval_set.empty(), ErrorKind::Contract, "evaluate_dataset: no queries");
  require(index.count() > 0, ErrorKind::Config, "evaluate_dataset: empty index");
  require(!cfg.retrieve_examples || example_index != nullptr,
          ErrorKind::Config,
          "evaluate_dataset: example retrieval needs an example index");

  EvalOutcome out;
  int64_t n = std::min<int64_t>(cfg.n_passages, index.count());
  for (size_t qi = 0; qi < eval_set.size(); ++qi) {
    const QaPair& qa = eval_set[qi];
    TargetQuery target{qa.question, {qa.answer}};
    Rng rng = make_rng(mix_seed(cfg.seed, static_cast<uint64_t>(qi)));

    std::vector<Example> examples;
    if (cfg.shots > 0) {
      if (cfg.retrieve_examples) {
        examples = retrieve_in_context_examples(
            retriever, tok, *example_index, train_pool, target,
            static_cast<int>(cfg.shots));
      } else {
        examples = detail::sample_examples(train_pool, cfg.shots, rng);
      }
    }

    std::vector<Passage> passages;
    {
      NoGradGuard ng;
      Tensor q = retriever.embed_text(tok.encode(qa.question));
      ScoredPassageSet hits =
          retrieve_top_k(q.data(), index, static_cast<int>(n));
      for (const auto& [id, score] : hits.hits) {
        (void)score;
        for (const auto& p : index.passages)
          if (p.id == id) {
            passages.push_back(p);
            break;
          }
      }
    }

    FiCLConfig ficl{cfg.shots, cfg.m_fusion > 0 ? cfg.m_fusion : cfg.shots,
                    static_cast<int64_t>(passages.size()),
                    mix_seed(cfg.seed, static_cast<uint64_t>(qi), 0x66ULL)};
    if (ficl.m_fusion == 0) ficl.m_fusion = 1;

    PromptAssembly assembly;
    try {
      assembly = assemble_fid_inputs(tok, cfg.mode, examples, target, passages,
                                     ficl, reader.config().max_encoder_len,
                                     cfg.position, PromptStrategy::s1, &rng);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Length) {
        ++out.skipped;
        continue;
      }
      throw;
    }

    std::vector<int> generated =
        reader.generate_greedy(assembly.encoder_tokens, cfg.max_new_tokens,
                               {Tokenizer::sentinel_id(0)});
    EvalRecord rec;
    rec.query_id = static_cast<int64_t>(qi);
    rec.prediction = detail::decode_generated(tok, generated);
    rec.golds = target.gold_answers;
    rec.em = exact_match(rec.prediction, rec.golds);
    rec.substring = substring_match(rec.prediction, rec.golds);
    rec.shots = cfg.shots;
    rec.passages = n;
    rec.mode = cfg.mode_label();
    rec.position = position_name(cfg.position);
    require(!rec.em || rec.substring, ErrorKind::Contract,
            "evaluate_dataset: exact match without substring match");
    out.records.push_back(std::move(rec));
  }

  if (!out.records.empty()) {
    for (const auto& r : out.records) {
      out.em += r.em ? 1.0 : 0.0;
      out.substring += r.substring ? 1.0 : 0.0;
    }
    out.em /= static_cast<double>(out.records.size());
    out.substring /= static_cast<double>(out.records.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Axis sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { shots, passages, position, mode };

inline SweepAxis parse_axis(const std::string& name) {
  if (name == "shots") return SweepAxis::shots;
  if (name == "passages") return SweepAxis::passages;
  if (name == "position") return SweepAxis::position;
  if (name == "mode") return SweepAxis::mode;
  raise(ErrorKind::Config, "unknown sweep axis: " + name);
}

struct SweepRow {
  std::string axis;
  std::string value;
  double em = 0.0;
  double substring = 0.0;
  int64_t count = 0;
  int64_t skipped = 0;
};

// Apply one axis value onto a base config. Modes: "standard" or "ficl:K:M".
inline SweepConfig apply_axis_value(SweepConfig base, SweepAxis axis,
                                    const std::string& value) {
  switch (axis) {
    case SweepAxis::shots:
      base.shots = std::stoll(value);
      break;
    case SweepAxis::passages:
      base.n_passages = std::stoll(value);
      break;
    case SweepAxis::position:
      if (value == "first")
        base.position = TargetPosition::first;
      else if (value == "random")
        base.position = TargetPosition::random;
      else if (value == "last")
        base.position = TargetPosition::last;
      else
        raise(ErrorKind::Config, "unknown position: " + value);
      break;
    case SweepAxis::mode: {
      if (value == "standard") {
        base.mode = AssemblyMode::standard;
        base.m_fusion = 0;
      } else if (value.rfind("ficl:", 0) == 0) {
        auto rest = value.substr(5);
        auto colon = rest.find(':');
        require(colon != std::string::npos, ErrorKind::Config,
                "mode value must be 'standard' or 'ficl:K:M'");
        base.mode = AssemblyMode::ficl;
        base.shots = std::stoll(rest.substr(0, colon));
        base.m_fusion = std::stoll(rest.substr(colon + 1));
      } else {
        raise(ErrorKind::Config, "unknown mode: " + value);
      }
      break;
    }
  }
  return base;
}

inline std::vector<SweepRow> run_sweep(
    const Reader& reader, const Retriever& retriever, const Tokenizer& tok,
    const VectorIndex& index, const std::vector<QaPair>& eval_set,
    const std::vector<QaPair>& train_pool, const SweepConfig& base,
    SweepAxis axis, const std::vector<std::string>& values,
    std::vector<EvalRecord>* all_records = nullptr,
    const VectorIndex* example_index = nullptr) {
  require(!values.empty(), ErrorKind::Config, "run_sweep: no axis values");
  std::vector<SweepRow> rows;
  const char* axis_names[] = {"shots", "passages", "position", "mode"};
  for (const auto& value : values) {
    SweepConfig cfg = apply_axis_value(base, axis, value);
    EvalOutcome outcome = evaluate_dataset(reader, retriever, tok, index,
                                           eval_set, train_pool, cfg,
                                           example_index);
    SweepRow row;
    row.axis = axis_names[static_cast<int>(axis)];
    row.value = value;
    row.em = outcome.em;
    row.substring = outcome.substring;
    row.count = static_cast<int64_t>(outcome.records.size());
    row.skipped = outcome.skipped;
    rows.push_back(row);
    if (all_records)
      all_records->insert(all_records->end(), outcome.records.begin(),
                          outcome.records.end());
  }
  return rows;
}

inline std::string encode_records_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = {{"query_id", r.query_id}, {"prediction", r.prediction},
                        {"golds", r.golds},       {"em", r.em},
                        {"substring", r.substring}, {"shots", r.shots},
                        {"passages", r.passages}, {"mode", r.mode},
                        {"position", r.position}};
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string encode_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,em,substring,count,skipped\n";
  for (const auto& r : rows) {
    out += r.axis + "," + r.value + "," + std::to_string(r.em) + "," +
           std::to_string(r.substring) + "," + std::to_string(r.count) + "," +
           std::to_string(r.skipped) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// FiD cost-scaling benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
  int64_t n = 0;            // number of passages
  int64_t fid_work = 0;     // encoder attention entries, fused
  int64_t concat_work = 0;  // encoder attention entries, one concatenation
  double fid_seconds = 0.0;
  double concat_seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double fid_work_slope = 0.0;
  double concat_work_slope = 0.0;
  double fid_time_slope = 0.0;
  double concat_time_slope = 0.0;
};

inline double fit_loglog_slope(const std::vector<double>& xs,
                               const std::vector<double>& ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, ErrorKind::Contract,
          "fit_loglog_slope: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    require(xs[i] > 0 && ys[i] > 0, ErrorKind::Contract,
            "fit_loglog_slope: values must be positive");
    double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double m = static_cast<double>(xs.size());
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

// Encoder attention cost, fused (per-passage) vs one big concatenation.
// Work is counted exactly from the attention score-entry counters; wall time
// is measured around the same calls.
inline BenchResult bench_fid_scaling(const Reader& reader,
                                     const std::vector<int64_t>& n_values,
                                     int64_t passage_len) {
  require(!n_values.empty(), ErrorKind::Contract, "bench: no passage counts");
  for (size_t i = 1; i < n_values.size(); ++i)
    require(n_values[i] > n_values[i - 1], ErrorKind::Contract,
            "bench: passage counts must be ascending");
  require(passage_len >= 1, ErrorKind::Contract, "bench: passage_len >= 1");

  const int64_t filler = 3;  // any non-pad token id
  BenchResult result;
  NoGradGuard ng;
  for (int64_t n : n_values) {
    require(n * passage_len <= reader.config().max_encoder_len,
            ErrorKind::Length,
            "bench: concatenated length " + std::to_string(n * passage_len) +
                " exceeds the encoder limit");
    BenchRow row;
    row.n = n;
    std::vector<std::vector<int>> fused(
        static_cast<size_t>(n),
        std::vector<int>(static_cast<size_t>(passage_len),
                         static_cast<int>(filler)));
    std::vector<std::vector<int>> concat{std::vector<int>(
        static_cast<size_t>(n * passage_len), static_cast<int>(filler))};

    reset_attention_work();
    auto t0 = std::chrono::steady_clock::now();
    reader.encode_passages(fused);
    auto t1 = std::chrono::steady_clock::now();
    row.fid_work = attention_work().self_entries;
    row.fid_seconds = std::chrono::duration<double>(t1 - t0).count();

    reset_attention_work();
    t0 = std::chrono::steady_clock::now();
    reader.encode_passages(concat);
    t1 = std::chrono::steady_clock::now();
    row.concat_work = attention_work().self_entries;
    row.concat_seconds = std::chrono::duration<double>(t1 - t0).count();

    result.rows.push_back(row);
  }

  std::vector<double> ns, fw, cw, ft, ct;
  for (const auto& r : result.rows) {
    ns.push_back(static_cast<double>(r.n));
    fw.push_back(static_cast<double>(r.fid_work));
    cw.push_back(static_cast<double>(r.concat_work));
    ft.push_back(r.fid_seconds);
    ct.push_back(r.concat_seconds);
  }
  if (ns.size() >= 2) {
    result.fid_work_slope = fit_loglog_slope(ns, fw);
    result.concat_work_slope = fit_loglog_slope(ns, cw);
    result.fid_time_slope = fit_loglog_slope(ns, ft);
    result.concat_time_slope = fit_loglog_slope(ns, ct);
  }
  return result;
}

inline std::string encode_bench_csv(const BenchResult& bench) {
  std::string out = "n,fid_work,concat_work,fid_seconds,concat_seconds\n";
  for (const auto& r : bench.rows) {
    out += std::to_string(r.n) + "," + std::to_string(r.fid_work) + "," +
           std::to_string(r.concat_work) + "," +
           std::to_string(r.fid_seconds) + "," +
           std::to_string(r.concat_seconds) + "\n";
  }
  return out;
}

}  // namespace raven
