#pragma once

// Two-stage training. Stage 1 trains reader and retriever jointly on span
// corruption: the reader reads all retrieved passages fused, while the
// retriever's score distribution is pulled toward the reader's per-passage
// answer posterior. Stage 2 switches to suffix prediction with the stage-1
// retriever frozen, which lines pretraining up with the prompting format used
// at inference time. The prefix_only and mix_joint stages exist as ablation
// arms selectable purely by config.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "raven/checkpoint.hpp"
#include "raven/corpus.hpp"
#include "raven/corruption.hpp"
#include "raven/error.hpp"
#include "raven/reader.hpp"
#include "raven/retriever.hpp"
#include "raven/rng.hpp"
#include "raven/tensor.hpp"
#include "raven/tokenizer.hpp"

namespace raven {

inline constexpr const char* kSoftwareVersion = "raven 0.1.0";

enum class TrainStage { mask_joint, prefix_frozen, prefix_only, mix_joint };

inline const char* stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::mask_joint: return "mask_joint";
    case TrainStage::prefix_frozen: return "prefix_frozen";
    case TrainStage::prefix_only: return "prefix_only";
    default: return "mix_joint";
  }
}

inline TrainStage parse_stage(const std::string& name) {
  if (name == "mask_joint") return TrainStage::mask_joint;
  if (name == "prefix_frozen") return TrainStage::prefix_frozen;
  if (name == "prefix_only") return TrainStage::prefix_only;
  if (name == "mix_joint") return TrainStage::mix_joint;
  raise(ErrorKind::Config, "unknown training stage: " + name);
}

struct TrainConfig {
  TrainStage stage = TrainStage::mask_joint;
  int64_t steps = 200;
  int64_t batch_size = 4;
  double learning_rate = 3e-4;
  int64_t warmup_steps = 20;
  double retriever_loss_weight = 1.0;  // weight on the KL term
  int n_train_passages = 20;
  int64_t index_refresh_every = 100;
  uint64_t seed = 0;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    require(steps >= 1, ErrorKind::Config, "train: steps must be >= 1");
    require(warmup_steps >= 0 && warmup_steps <= steps, ErrorKind::Config,
            "train: need 0 <= warmup_steps <= steps");
    require(batch_size >= 1, ErrorKind::Config, "train: batch_size must be >= 1");
    require(learning_rate > 0.0, ErrorKind::Config,
            "train: learning_rate must be positive");
    require(retriever_loss_weight >= 0.0, ErrorKind::Config,
            "train: retriever_loss_weight must be >= 0");
    require(n_train_passages >= 1, ErrorKind::Config,
            "train: n_train_passages must be >= 1");
    require(index_refresh_every >= 1, ErrorKind::Config,
            "train: index_refresh_every must be >= 1");
    require(clip_norm >= 0.0, ErrorKind::Config,
            "train: clip_norm must be >= 0 (0 disables clipping)");
  }

  nlohmann::json to_json() const {
    return {{"stage", stage_name(stage)},
            {"steps", steps},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"warmup_steps", warmup_steps},
            {"retriever_loss_weight", retriever_loss_weight},
            {"n_train_passages", n_train_passages},
            {"index_refresh_every", index_refresh_every},
            {"seed", seed},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm}};
  }
};

// Linear warmup to the peak rate, then linear decay to zero at `steps`.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  require(step >= 0 && step <= cfg.steps, ErrorKind::Contract,
          "lr_at: step " + std::to_string(step) + " outside [0, " +
              std::to_string(cfg.steps) + "]");
  if (step < cfg.warmup_steps)
    return cfg.learning_rate * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.steps) return 0.0;
  return cfg.learning_rate *
         static_cast<double>(cfg.steps - step) /
         static_cast<double>(cfg.steps - cfg.warmup_steps);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  int64_t t = 0;
};

inline double global_grad_norm(const std::vector<const ParameterSet*>& sets) {
  double sq = 0.0;
  for (const auto* set : sets)
    for (const auto& [name, p] : *set) {
      (void)name;
      if (!p.has_grad()) continue;
      for (double g : p.grad()) sq += g * g;
    }
  return std::sqrt(sq);
}

// One decoupled-weight-decay Adam update over every parameter in `sets`.
// Gradients are read in place; clip_norm > 0 rescales them jointly when the
// global norm exceeds it. A non-finite gradient aborts, naming the parameter.
inline void optimizer_step(const std::vector<ParameterSet*>& sets,
                           AdamState& state, double lr,
                           double weight_decay = 0.0, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8,
                           double clip_norm = 0.0) {
  for (auto* set : sets)
    for (const auto& [name, p] : *set)
      if (p.has_grad())
        for (double g : p.grad())
          require(std::isfinite(g), ErrorKind::Numeric,
                  "non-finite gradient in parameter '" + name + "'");

  double scale = 1.0;
  if (clip_norm > 0.0) {
    std::vector<const ParameterSet*> views(sets.begin(), sets.end());
    double norm = global_grad_norm(views);
    if (norm > clip_norm) scale = clip_norm / norm;
  }

  ++state.t;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto* set : sets) {
    for (auto& [name, p] : *set) {
      auto& data = p.mutable_data();
      auto& m = state.m[name];
      auto& v = state.v[name];
      if (m.empty()) m.assign(data.size(), 0.0);
      if (v.empty()) v.assign(data.size(), 0.0);
      const bool has = p.has_grad();
      for (size_t i = 0; i < data.size(); ++i) {
        double g = has ? p.grad()[i] * scale : 0.0;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        data[i] -= lr * weight_decay * data[i];
        data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

struct LossRecord {
  int64_t step = 0;
  double lr = 0.0;
  double reader_nll = 0.0;
  double retriever_kl = 0.0;
  double total = 0.0;
};

inline std::string encode_loss_log(const std::vector<LossRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::json j = {{"step", r.step},
                        {"lr", r.lr},
                        {"reader_nll", r.reader_nll},
                        {"retriever_kl", r.retriever_kl},
                        {"total", r.total}};
    out += j.dump() + "\n";
  }
  return out;
}

struct RunManifest {
  nlohmann::json config;
  std::string version = kSoftwareVersion;
  uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::string loss_log_path;

  nlohmann::json to_json() const {
    return {{"config", config},
            {"version", version},
            {"seed", seed},
            {"checkpoints", checkpoints},
            {"loss_log", loss_log_path}};
  }
};

struct TrainResult {
  std::vector<LossRecord> log;
  RunManifest manifest;
};

// Reader and retriever weights in one file; the name prefixes keep the two
// parameter sets apart.
inline void save_model_checkpoint(const std::string& path, const Reader& reader,
                                  const Retriever& retriever,
                                  std::map<std::string, std::string> meta = {}) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (const auto& [name, t] : reader.params()) ckpt.tensors.emplace(name, t);
  for (const auto& [name, t] : retriever.params()) ckpt.tensors.emplace(name, t);
  write_file(path, encode_checkpoint(ckpt));
}

namespace detail {

inline Checkpoint filter_checkpoint(const Checkpoint& ckpt,
                                    const std::string& prefix) {
  Checkpoint out;
  out.meta = ckpt.meta;
  for (const auto& [name, t] : ckpt.tensors)
    if (name.rfind(prefix, 0) == 0) out.tensors.emplace(name, t);
  return out;
}

}  // namespace detail

inline Checkpoint load_model_checkpoint(const std::string& path, Reader& reader,
                                        Retriever& retriever) {
  Checkpoint ckpt = load_checkpoint(path);
  load_into(reader.params(), detail::filter_checkpoint(ckpt, "reader."));
  load_into(retriever.params(), detail::filter_checkpoint(ckpt, "retriever."));
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> fit_prompt(const std::vector<int>& corrupted,
                                   const std::vector<int>& passage_block,
                                   int max_len) {
  std::vector<int> out = corrupted;
  out.insert(out.end(), passage_block.begin(), passage_block.end());
  if (static_cast<int>(out.size()) > max_len) out.resize(max_len);
  return out;
}

inline std::vector<double> snapshot_params(const ParameterSet& set) {
  std::vector<double> out;
  for (const auto& [_, t] : set)
    out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

inline TrainResult train_loop(Reader& reader, Retriever& retriever,
                              const Tokenizer& tok, const Corpus& corpus,
                              const TrainConfig& cfg) {
  cfg.validate();
  require(!corpus.empty(), ErrorKind::Config, "train: empty corpus");

  const bool joint = cfg.stage == TrainStage::mask_joint ||
                     cfg.stage == TrainStage::mix_joint;
  const bool train_retriever = joint && cfg.retriever_loss_weight > 0.0;
  const bool retriever_frozen = !joint;

  // token caches: corruption sources, retriever texts, reader passage blocks
  std::vector<std::vector<int>> sources, retr_texts, blocks;
  for (const auto& p : corpus) {
    sources.push_back(tok.encode(p.text));
    retr_texts.push_back(
        tok.encode(p.title.empty() ? p.text : p.title + " " + p.text));
    blocks.push_back(tok.encode("title: " + p.title + " context: " + p.text));
  }

  std::vector<double> frozen_before;
  if (retriever_frozen) frozen_before = snapshot_params(retriever.params());

  std::vector<ParameterSet*> trained{&reader.params()};
  if (train_retriever) trained.push_back(&retriever.params());

  Rng rng = make_rng(mix_seed(cfg.seed, 0x747261696eULL));
  VectorIndex index;
  AdamState opt;
  TrainResult result;
  result.manifest.config = cfg.to_json();
  result.manifest.seed = cfg.seed;

  const int k = std::min<int>(cfg.n_train_passages,
                              static_cast<int>(corpus.size()));
  const double temperature = retriever.config().temperature;

  for (int64_t step = 0; step < cfg.steps; ++step) {
    if (step % cfg.index_refresh_every == 0)
      index = retriever.refresh_index(corpus, retr_texts);

    std::vector<Tensor> losses;
    double nll_sum = 0.0, kl_sum = 0.0;
    int64_t attempts = 0;
    while (static_cast<int64_t>(losses.size()) < cfg.batch_size) {
      require(++attempts <= cfg.batch_size * 50, ErrorKind::Contract,
              "train: could not draw a full batch; corpus texts too short");
      int64_t src = uniform_int(rng, 0, static_cast<int64_t>(corpus.size()) - 1);

      std::optional<CorruptedSample> sample;
      switch (cfg.stage) {
        case TrainStage::mask_joint:
          sample = mask_spans(sources[src], rng);
          break;
        case TrainStage::mix_joint:
          sample = mix_corrupt(sources[src], rng);
          break;
        default:
          sample = mask_suffix(sources[src], rng);
          break;
      }
      if (!sample || sample->retrieval_query.empty()) continue;

      ScoredPassageSet hits;
      {
        NoGradGuard ng;
        Tensor q = retriever.embed_text(sample->retrieval_query);
        int64_t exclude =
            retriever.config().exclude_identical ? corpus[src].id : -1;
        hits = retrieve_top_k(q.data(), index, k, exclude);
      }
      if (hits.hits.empty()) continue;

      std::vector<std::vector<int>> prompts, retr_passages;
      for (const auto& [id, score] : hits.hits) {
        (void)score;
        prompts.push_back(fit_prompt(sample->encoder_tokens, blocks[id],
                                     reader.config().max_encoder_len));
        retr_passages.push_back(retr_texts[id]);
      }

      Tensor nll = reader.nll_loss(prompts, sample->target, &rng);
      nll_sum += nll.data()[0];
      Tensor loss = nll;
      if (train_retriever) {
        std::vector<double> lls;
        for (const auto& prompt : prompts)
          lls.push_back(reader.score_answer_per_passage(prompt, sample->target));
        Distribution posterior = reader_posterior(lls);
        Tensor scores =
            retriever.training_scores(sample->retrieval_query, retr_passages);
        Distribution rdist = retriever_distribution(scores, temperature);
        Tensor kl = retriever_kl_loss(posterior, rdist);
        kl_sum += kl.data()[0];
        loss = add(nll, scale(kl, cfg.retriever_loss_weight));
      }
      losses.push_back(loss);
    }

    Tensor batch = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) batch = add(batch, losses[i]);
    batch = scale(batch, 1.0 / static_cast<double>(cfg.batch_size));

    double total = batch.data()[0];
    require(std::isfinite(total), ErrorKind::Numeric,
            "non-finite loss at step " + std::to_string(step));

    reader.params().zero_grad();
    retriever.params().zero_grad();
    backward(batch);

    double lr = lr_at(step, cfg);
    optimizer_step(trained, opt, lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
                   cfg.adam_eps, cfg.clip_norm);

    result.log.push_back({step, lr,
                          nll_sum / static_cast<double>(cfg.batch_size),
                          kl_sum / static_cast<double>(cfg.batch_size), total});
  }

  if (retriever_frozen) {
    std::vector<double> after = snapshot_params(retriever.params());
    require(after == frozen_before, ErrorKind::Contract,
            "frozen retriever parameters drifted during training");
  }
  return result;
}

}  // namespace detail

inline TrainResult train_stage1(Reader& reader, Retriever& retriever,
                                const Tokenizer& tok, const Corpus& corpus,
                                const TrainConfig& cfg) {
  require(cfg.stage == TrainStage::mask_joint ||
              cfg.stage == TrainStage::mix_joint,
          ErrorKind::Config, "train_stage1: stage must be mask_joint or mix_joint");
  return detail::train_loop(reader, retriever, tok, corpus, cfg);
}

inline TrainResult train_stage2(Reader& reader, Retriever& retriever,
                                const Tokenizer& tok, const Corpus& corpus,
                                const TrainConfig& cfg,
                                const std::string& stage1_checkpoint) {
  require(cfg.stage == TrainStage::prefix_frozen, ErrorKind::Config,
          "train_stage2: stage must be prefix_frozen");
  require(!stage1_checkpoint.empty() &&
              std::filesystem::exists(stage1_checkpoint),
          ErrorKind::Config,
          "train_stage2: missing stage-1 checkpoint '" + stage1_checkpoint + "'");
  load_model_checkpoint(stage1_checkpoint, reader, retriever);
  return detail::train_loop(reader, retriever, tok, corpus, cfg);
}

// Single entry point covering the ablation arms: mask_joint and mix_joint
// train jointly from the current weights; prefix_frozen requires a stage-1
// checkpoint; prefix_only runs the suffix objective from scratch with the
// retriever frozen at its initial weights.
inline TrainResult train_variant(Reader& reader, Retriever& retriever,
                                 const Tokenizer& tok, const Corpus& corpus,
                                 const TrainConfig& cfg,
                                 const std::string& stage1_checkpoint = "") {
  switch (cfg.stage) {
    case TrainStage::mask_joint:
    case TrainStage::mix_joint:
      return train_stage1(reader, retriever, tok, corpus, cfg);
    case TrainStage::prefix_frozen:
      return train_stage2(reader, retriever, tok, corpus, cfg,
                          stage1_checkpoint);
    default:
      return detail::train_loop(reader, retriever, tok, corpus, cfg);
  }
}

}  // namespace raven
