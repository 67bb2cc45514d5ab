#pragma once

// Encoder-decoder transformer reader with fusion-in-decoder: every passage is
// encoded independently (positions restarting at zero), and the decoder
// cross-attends over the row-wise concatenation of all encodings. Encoder
// self-attention therefore costs Σ lenᵢ² score entries instead of (Σ lenᵢ)².

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "raven/error.hpp"
#include "raven/parallel.hpp"
#include "raven/rng.hpp"
#include "raven/tensor.hpp"

namespace raven {

// Score-matrix entry counters, split by attention kind. Encoder fan-out may
// run on worker threads, hence atomics.
struct AttentionWork {
  std::atomic<int64_t> self_entries{0};
  std::atomic<int64_t> cross_entries{0};
};

inline AttentionWork& attention_work() {
  static AttentionWork w;
  return w;
}
inline void reset_attention_work() {
  attention_work().self_entries.store(0);
  attention_work().cross_entries.store(0);
}

struct ReaderConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int max_encoder_len = 384;
  int max_decoder_len = 64;
  double dropout = 0.0;
  int pad_id = 0;

  void validate() const {
    require(vocab_size > 0, ErrorKind::Config, "reader: vocab_size must be positive");
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
            ErrorKind::Config,
            "reader: d_model " + std::to_string(d_model) +
                " not divisible into " + std::to_string(n_heads) + " heads");
    require(n_enc_layers > 0 && n_dec_layers > 0 && d_ff > 0, ErrorKind::Config,
            "reader: layer sizes must be positive");
    require(max_encoder_len > 0 && max_decoder_len > 0, ErrorKind::Config,
            "reader: length limits must be positive");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config,
            "reader: dropout must be in [0,1)");
  }
};

struct EncodedPassage {
  int passage_index = 0;
  Tensor hidden;               // [seq_len, d_model]
  std::vector<uint8_t> mask;   // 1 = real token, 0 = padding
};

class Reader {
 public:
  static constexpr int kDecoderStart = 0;  // <pad> primes the decoder

  Reader(ReaderConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(mix_seed(seed, 0x5ead));
    auto w = [&](const std::string& name, Shape shape) {
      params_.add(name, Tensor::randn(shape, rng, 0.02));
    };
    int64_t d = cfg_.d_model;
    w("reader.tok_emb", {cfg_.vocab_size, d});
    w("reader.enc.pos", {cfg_.max_encoder_len, d});
    w("reader.dec.pos", {cfg_.max_decoder_len, d});
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      std::string p = "reader.enc.l" + std::to_string(l) + ".";
      add_ln(p + "ln1.");
      add_attn(p + "self.", rng);
      add_ln(p + "ln2.");
      add_ffn(p + "ffn.", rng);
    }
    add_ln("reader.enc.final_ln.");
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      std::string p = "reader.dec.l" + std::to_string(l) + ".";
      add_ln(p + "ln1.");
      add_attn(p + "self.", rng);
      add_ln(p + "ln2.");
      add_attn(p + "cross.", rng);
      add_ln(p + "ln3.");
      add_ffn(p + "ffn.", rng);
    }
    add_ln("reader.dec.final_ln.");
  }

  const ReaderConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Independent per-passage encodings; fan-out across the worker pool.
  std::vector<EncodedPassage> encode_passages(
      const std::vector<std::vector<int>>& prompts, Rng* drop = nullptr) const {
    require(!prompts.empty(), ErrorKind::Contract,
            "encode_passages: empty prompt list");
    for (size_t i = 0; i < prompts.size(); ++i) {
      require(!prompts[i].empty(), ErrorKind::Contract,
              "encode_passages: passage " + std::to_string(i) + " is empty");
      require(static_cast<int>(prompts[i].size()) <= cfg_.max_encoder_len,
              ErrorKind::Length,
              "encode_passages: passage " + std::to_string(i) + " has " +
                  std::to_string(prompts[i].size()) + " tokens, limit " +
                  std::to_string(cfg_.max_encoder_len));
    }
    uint64_t drop_base = drop ? (*drop)() : 0;
    bool training = drop != nullptr;
    bool gm = grad_mode();
    std::vector<EncodedPassage> out(prompts.size());
    parallel_for(static_cast<int64_t>(prompts.size()), [&](int64_t lo, int64_t hi) {
      grad_mode() = gm;  // workers inherit the caller's recording mode
      for (int64_t i = lo; i < hi; ++i) {
        Rng local = make_rng(mix_seed(drop_base, static_cast<uint64_t>(i)));
        out[i].passage_index = static_cast<int>(i);
        out[i].hidden = encode_one(prompts[i], training ? &local : nullptr);
        out[i].mask.resize(prompts[i].size());
        for (size_t j = 0; j < prompts[i].size(); ++j)
          out[i].mask[j] = prompts[i][j] != cfg_.pad_id;
      }
    });
    return out;
  }

  // Causal decoder over the fused encodings; returns [t, vocab] logits.
  Tensor decode_logits(const std::vector<EncodedPassage>& encodings,
                       const std::vector<int>& decoder_input,
                       Rng* drop = nullptr) const {
    require(!encodings.empty(), ErrorKind::Contract,
            "decode_logits: no encodings");
    require(!decoder_input.empty(), ErrorKind::Contract,
            "decode_logits: empty decoder input");
    require(static_cast<int>(decoder_input.size()) <= cfg_.max_decoder_len,
            ErrorKind::Length,
            "decode_logits: " + std::to_string(decoder_input.size()) +
                " tokens exceed decoder limit " +
                std::to_string(cfg_.max_decoder_len));

    std::vector<Tensor> hiddens;
    std::vector<uint8_t> fused_mask;
    for (const auto& e : encodings) {
      require(e.hidden.rank() == 2 && e.hidden.dim(1) == cfg_.d_model &&
                  e.hidden.dim(0) == static_cast<int64_t>(e.mask.size()),
              ErrorKind::Contract, "decode_logits: malformed encoding");
      hiddens.push_back(e.hidden);
      fused_mask.insert(fused_mask.end(), e.mask.begin(), e.mask.end());
    }
    Tensor kv = hiddens.size() == 1 ? hiddens[0] : concat_rows(hiddens);
    Tensor key_bias = mask_bias(fused_mask);

    int64_t t = static_cast<int64_t>(decoder_input.size());
    Tensor x = add(embedding(params_.get("reader.tok_emb"), decoder_input),
                   embedding(params_.get("reader.dec.pos"), iota_ids(t)));
    x = maybe_dropout(x, drop);
    Tensor causal = causal_bias(t);
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      std::string p = "reader.dec.l" + std::to_string(l) + ".";
      Tensor h = ln(x, p + "ln1.");
      x = add(x, maybe_dropout(attn(h, h, p + "self.", Tensor(), causal, false),
                               drop));
      x = add(x, maybe_dropout(attn(ln(x, p + "ln2."), kv, p + "cross.",
                                    key_bias, Tensor(), true),
                               drop));
      x = add(x, maybe_dropout(ffn(ln(x, p + "ln3."), p + "ffn."), drop));
    }
    x = ln(x, "reader.dec.final_ln.");
    // Output head tied to the token embedding (scaled by 1/sqrt(d)): rare
    // tokens stay decodable because every occurrence anywhere in a batch
    // trains the same rows the readout uses.
    return matmul(scale(x, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model))),
                  transpose_last2(params_.get("reader.tok_emb")));
  }

  // Σᵢ log p(aᵢ | prompts, a₁:ᵢ₋₁): teacher-forced sum of target log-probs.
  double log_likelihood(const std::vector<std::vector<int>>& prompts,
                        const std::vector<int>& answer) const {
    require(!answer.empty(), ErrorKind::Contract, "log_likelihood: empty answer");
    NoGradGuard ng;
    Tensor logits = decode_logits(encode_passages(prompts),
                                  teacher_input(answer));
    int64_t v = logits.dim(1);
    double total = 0.0;
    for (size_t i = 0; i < answer.size(); ++i) {
      const double* row = logits.data().data() + i * v;
      require(answer[i] >= 0 && answer[i] < v, ErrorKind::Contract,
              "log_likelihood: answer token out of vocabulary");
      double mx = row[0];
      for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double lse = 0.0;
      for (int64_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
      total += row[answer[i]] - (mx + std::log(lse));
    }
    return total;
  }

  // log p_LM(a | d, q): the single-passage likelihood behind the reader
  // posterior.
  double score_answer_per_passage(const std::vector<int>& prompt,
                                  const std::vector<int>& answer) const {
    return log_likelihood({prompt}, answer);
  }

  // Mean cross-entropy over the answer tokens, graph attached for training.
  Tensor nll_loss(const std::vector<std::vector<int>>& prompts,
                  const std::vector<int>& answer, Rng* drop = nullptr) const {
    require(!answer.empty(), ErrorKind::Contract, "nll_loss: empty answer");
    Tensor logits =
        decode_logits(encode_passages(prompts, drop), teacher_input(answer), drop);
    return cross_entropy_nll(logits, answer, -1);
  }

  // Greedy argmax continuation after a primed prefix (default: the first
  // sentinel). Ties break toward the lower token id; stops at eos or the cap.
  std::vector<int> generate_greedy(const std::vector<std::vector<int>>& prompts,
                                   int max_new_tokens,
                                   std::vector<int> prime = {},
                                   int eos_id = 1) const {
    require(max_new_tokens >= 1, ErrorKind::Contract,
            "generate_greedy: max_new_tokens must be >= 1");
    NoGradGuard ng;
    std::vector<EncodedPassage> encodings = encode_passages(prompts);
    std::vector<int> input{kDecoderStart};
    input.insert(input.end(), prime.begin(), prime.end());
    std::vector<int> out = std::move(prime);
    for (int step = 0; step < max_new_tokens; ++step) {
      if (static_cast<int>(input.size()) >= cfg_.max_decoder_len) break;
      Tensor logits = decode_logits(encodings, input);
      int64_t v = logits.dim(1);
      const double* row = logits.data().data() + (input.size() - 1) * v;
      int best = 0;
      for (int64_t j = 1; j < v; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      out.push_back(best);
      input.push_back(best);
      if (best == eos_id) break;
    }
    return out;
  }

  // Teacher-forcing decoder input: start token, then the answer shifted
  // right by one.
  static std::vector<int> teacher_input(const std::vector<int>& answer) {
    std::vector<int> input{kDecoderStart};
    input.insert(input.end(), answer.begin(), answer.end() - 1);
    return input;
  }

 private:
  void add_ln(const std::string& prefix) {
    params_.add(prefix + "g", Tensor::full({cfg_.d_model}, 1.0));
    params_.add(prefix + "b", Tensor::zeros({cfg_.d_model}));
  }
  void add_attn(const std::string& prefix, Rng& rng) {
    int64_t d = cfg_.d_model;
    for (const char* n : {"wq", "wk", "wv", "wo"})
      params_.add(prefix + n, Tensor::randn({d, d}, rng, 0.02));
  }
  void add_ffn(const std::string& prefix, Rng& rng) {
    int64_t d = cfg_.d_model, ff = cfg_.d_ff;
    params_.add(prefix + "w1", Tensor::randn({d, ff}, rng, 0.02));
    params_.add(prefix + "b1", Tensor::zeros({ff}));
    params_.add(prefix + "w2", Tensor::randn({ff, d}, rng, 0.02));
    params_.add(prefix + "b2", Tensor::zeros({d}));
  }

  static std::vector<int> iota_ids(int64_t n) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
  }

  Tensor ln(const Tensor& x, const std::string& prefix) const {
    return layer_norm(x, params_.get(prefix + "g"), params_.get(prefix + "b"));
  }

  Tensor ffn(const Tensor& x, const std::string& prefix) const {
    Tensor h = gelu(add_bias(matmul(x, params_.get(prefix + "w1")),
                             params_.get(prefix + "b1")));
    return add_bias(matmul(h, params_.get(prefix + "w2")),
                    params_.get(prefix + "b2"));
  }

  Tensor maybe_dropout(const Tensor& x, Rng* drop) const {
    if (!drop || cfg_.dropout <= 0.0) return x;
    return dropout(x, cfg_.dropout, *drop, true);
  }

  // Additive key bias from a padding mask: 0 for real tokens, -1e30 for pads.
  // Undefined tensor when nothing is masked (skips the add).
  static Tensor mask_bias(const std::vector<uint8_t>& mask) {
    bool any = false;
    for (uint8_t m : mask) any |= (m == 0);
    if (!any) return Tensor();
    require(std::find(mask.begin(), mask.end(), 1) != mask.end(),
            ErrorKind::Contract, "attention: every key position is masked");
    std::vector<double> bias(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) bias[i] = mask[i] ? 0.0 : -1e30;
    return Tensor::from_data({static_cast<int64_t>(mask.size())},
                             std::move(bias));
  }

  // [heads, t, t] additive causal mask: position i attends to j ≤ i.
  Tensor causal_bias(int64_t t) const {
    std::vector<double> bias(cfg_.n_heads * t * t, 0.0);
    for (int h = 0; h < cfg_.n_heads; ++h)
      for (int64_t i = 0; i < t; ++i)
        for (int64_t j = i + 1; j < t; ++j)
          bias[(h * t + i) * t + j] = -1e30;
    return Tensor::from_data({cfg_.n_heads, t, t}, std::move(bias));
  }

  // Multi-head attention. `key_bias` ([tk], additive) masks padding keys;
  // `causal` ([H, tq, tq], additive) enforces autoregression; either may be
  // an undefined Tensor.
  Tensor attn(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
              const Tensor& key_bias, const Tensor& causal, bool is_cross) const {
    int64_t heads = cfg_.n_heads;
    int64_t dh = cfg_.d_model / heads;
    Tensor qh = split_heads(matmul(q_in, params_.get(prefix + "wq")), heads);
    Tensor kh = split_heads(matmul(kv_in, params_.get(prefix + "wk")), heads);
    Tensor vh = split_heads(matmul(kv_in, params_.get(prefix + "wv")), heads);
    Tensor scores =
        scale(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(double(dh)));
    int64_t entries = heads * q_in.dim(0) * kv_in.dim(0);
    auto& work = attention_work();
    (is_cross ? work.cross_entries : work.self_entries)
        .fetch_add(entries, std::memory_order_relaxed);
    if (key_bias.defined()) scores = add_bias(scores, key_bias);
    if (causal.defined()) scores = add(scores, causal);
    Tensor mixed = matmul(softmax_rows(scores), vh);
    return matmul(merge_heads(mixed), params_.get(prefix + "wo"));
  }

  // One passage through the encoder stack; positions restart at zero.
  Tensor encode_one(const std::vector<int>& tokens, Rng* drop) const {
    int64_t len = static_cast<int64_t>(tokens.size());
    std::vector<uint8_t> mask(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] != cfg_.pad_id;
    Tensor key_bias = mask_bias(mask);
    Tensor x = add(embedding(params_.get("reader.tok_emb"), tokens),
                   embedding(params_.get("reader.enc.pos"), iota_ids(len)));
    x = maybe_dropout(x, drop);
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      std::string p = "reader.enc.l" + std::to_string(l) + ".";
      Tensor h = ln(x, p + "ln1.");
      x = add(x, maybe_dropout(attn(h, h, p + "self.", key_bias, Tensor(), false),
                               drop));
      x = add(x, maybe_dropout(ffn(ln(x, p + "ln2."), p + "ffn."), drop));
    }
    return ln(x, "reader.enc.final_ln.");
  }

  ReaderConfig cfg_;
  ParameterSet params_;
};

}  // namespace raven
