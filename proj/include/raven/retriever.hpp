#pragma once

// Bi-encoder dense retriever: one small transformer encoder with mean
// pooling, shared between queries and passages, scored by dot product.
// Provides exact top-K search over an in-memory index, the
// temperature-softmax retriever distribution, the reader posterior, and the
// KL loss that trains the retriever against the reader's signal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "raven/corpus.hpp"
#include "raven/error.hpp"
#include "raven/parallel.hpp"
#include "raven/rng.hpp"
#include "raven/tensor.hpp"

namespace raven {

struct RetrieverConfig {
  int vocab_size = 0;
  int embed_dim = 64;        // also the encoder width
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 128;
  int max_len = 512;
  double temperature = 0.1;  // T in exp(s(d,q)/T); no published value
  int top_k = 5;             // K
  bool exclude_identical = true;
  int pad_id = 0;

  void validate() const {
    require(vocab_size > 0, ErrorKind::Config, "retriever: vocab_size must be positive");
    require(embed_dim > 0 && n_heads > 0 && embed_dim % n_heads == 0,
            ErrorKind::Config,
            "retriever: embed_dim " + std::to_string(embed_dim) +
                " not divisible into " + std::to_string(n_heads) + " heads");
    require(n_layers > 0 && d_ff > 0 && max_len > 0, ErrorKind::Config,
            "retriever: layer sizes must be positive");
    require(temperature > 0.0, ErrorKind::Config,
            "retriever: temperature must be positive");
    require(top_k >= 1, ErrorKind::Config, "retriever: top_k must be >= 1");
  }
};

// Exact-search index: embedding rows aligned with the passage list.
struct VectorIndex {
  int64_t embed_dim = 0;
  std::vector<double> rows;    // count x embed_dim, row-major
  std::vector<Passage> passages;

  int64_t count() const { return static_cast<int64_t>(passages.size()); }
  const double* row(int64_t i) const { return rows.data() + i * embed_dim; }
};

struct ScoredPassageSet {
  std::vector<std::pair<int64_t, double>> hits;  // (passage id, score), desc
  std::vector<double> query;                     // query embedding echo
  bool truncated = false;                        // fewer than K available
};

enum class DistributionRole { retriever, reader_posterior };

struct Distribution {
  Tensor probs;  // [K]; graph-carrying for the retriever side
  DistributionRole role;
};

inline constexpr const char* kIndexMagic = "RAVENIDX1";

class Retriever {
 public:
  Retriever(RetrieverConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(mix_seed(seed, 0x7e2));
    int64_t d = cfg_.embed_dim, ff = cfg_.d_ff, v = cfg_.vocab_size;
    params_.add("retriever.tok_emb", Tensor::randn({v, d}, rng, 0.02));
    params_.add("retriever.pos", Tensor::randn({cfg_.max_len, d}, rng, 0.02));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      std::string p = "retriever.l" + std::to_string(l) + ".";
      add_ln(p + "ln1.");
      for (const char* n : {"wq", "wk", "wv", "wo"})
        params_.add(p + n, Tensor::randn({d, d}, rng, 0.02));
      add_ln(p + "ln2.");
      params_.add(p + "ffn.w1", Tensor::randn({d, ff}, rng, 0.02));
      params_.add(p + "ffn.b1", Tensor::zeros({ff}));
      params_.add(p + "ffn.w2", Tensor::randn({ff, d}, rng, 0.02));
      params_.add(p + "ffn.b2", Tensor::zeros({d}));
    }
    add_ln("retriever.final_ln.");
  }

  const RetrieverConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Mean-pooled encoding; graph-carrying so training can reach the encoder.
  Tensor embed_text(const std::vector<int>& tokens) const {
    Tensor hidden = encode_hidden(tokens);  // [len, d]
    int64_t len = hidden.dim(0);
    Tensor ones = Tensor::full({1, len}, 1.0 / static_cast<double>(len));
    return reshape(matmul(ones, hidden), {cfg_.embed_dim});
  }

  // Final hidden states before pooling; exposed so pooling stays checkable.
  Tensor encode_hidden(const std::vector<int>& tokens) const {
    require(!tokens.empty(), ErrorKind::Contract, "embed_text: empty input");
    require(static_cast<int>(tokens.size()) <= cfg_.max_len, ErrorKind::Length,
            "embed_text: " + std::to_string(tokens.size()) +
                " tokens exceed retriever limit " + std::to_string(cfg_.max_len));
    return encode(tokens);
  }

  // Recompute every passage embedding with current parameters.
  VectorIndex refresh_index(const Corpus& corpus,
                            const std::vector<std::vector<int>>& texts) const {
    require(!corpus.empty(), ErrorKind::Contract, "refresh_index: empty corpus");
    require(texts.size() == corpus.size(), ErrorKind::Contract,
            "refresh_index: " + std::to_string(texts.size()) + " token lists for " +
                std::to_string(corpus.size()) + " passages");
    VectorIndex index;
    index.embed_dim = cfg_.embed_dim;
    index.passages = corpus;
    index.rows.assign(corpus.size() * cfg_.embed_dim, 0.0);
    parallel_for(static_cast<int64_t>(corpus.size()), [&](int64_t lo, int64_t hi) {
      NoGradGuard ng;
      for (int64_t i = lo; i < hi; ++i) {
        Tensor e = embed_text(texts[i]);
        std::copy(e.data().begin(), e.data().end(),
                  index.rows.begin() + i * cfg_.embed_dim);
      }
    });
    return index;
  }

  // Graph-carrying dot-product scores s(d,q) for the retrieved set, used by
  // the training loss. Embeds the query and each passage with the shared
  // encoder.
  Tensor training_scores(const std::vector<int>& query_tokens,
                         const std::vector<std::vector<int>>& passage_tokens) const {
    require(!passage_tokens.empty(), ErrorKind::Contract,
            "training_scores: no passages");
    Tensor q = reshape(embed_text(query_tokens), {cfg_.embed_dim, 1});
    std::vector<Tensor> rows;
    for (const auto& toks : passage_tokens)
      rows.push_back(reshape(embed_text(toks), {1, cfg_.embed_dim}));
    Tensor mat = rows.size() == 1 ? rows[0] : concat_rows(rows);
    return reshape(matmul(mat, q), {static_cast<int64_t>(rows.size())});
  }

 private:
  void add_ln(const std::string& prefix) {
    params_.add(prefix + "g", Tensor::full({cfg_.embed_dim}, 1.0));
    params_.add(prefix + "b", Tensor::zeros({cfg_.embed_dim}));
  }

  Tensor ln(const Tensor& x, const std::string& prefix) const {
    return layer_norm(x, params_.get(prefix + "g"), params_.get(prefix + "b"));
  }

  Tensor encode(const std::vector<int>& tokens) const {
    int64_t len = static_cast<int64_t>(tokens.size());
    std::vector<int> pos(len);
    std::iota(pos.begin(), pos.end(), 0);
    Tensor x = add(embedding(params_.get("retriever.tok_emb"), tokens),
                   embedding(params_.get("retriever.pos"), pos));
    int64_t heads = cfg_.n_heads, dh = cfg_.embed_dim / heads;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      std::string p = "retriever.l" + std::to_string(l) + ".";
      Tensor h = ln(x, p + "ln1.");
      Tensor qh = split_heads(matmul(h, params_.get(p + "wq")), heads);
      Tensor kh = split_heads(matmul(h, params_.get(p + "wk")), heads);
      Tensor vh = split_heads(matmul(h, params_.get(p + "wv")), heads);
      Tensor scores =
          scale(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(double(dh)));
      Tensor mixed = merge_heads(matmul(softmax_rows(scores), vh));
      x = add(x, matmul(mixed, params_.get(p + "wo")));
      Tensor f = ln(x, p + "ln2.");
      Tensor inner = gelu(add_bias(matmul(f, params_.get(p + "ffn.w1")),
                                   params_.get(p + "ffn.b1")));
      x = add(x, add_bias(matmul(inner, params_.get(p + "ffn.w2")),
                          params_.get(p + "ffn.b2")));
    }
    return ln(x, "retriever.final_ln.");
  }

  RetrieverConfig cfg_;
  ParameterSet params_;
};

// Exact top-K by dot product; ties broken toward the lower passage id.
// `exclude_id` (negative = none) drops that passage before ranking; if fewer
// than K remain, all are returned and `truncated` is set.
inline ScoredPassageSet retrieve_top_k(const std::vector<double>& query,
                                       const VectorIndex& index, int k,
                                       int64_t exclude_id = -1) {
  require(k >= 1, ErrorKind::Contract, "retrieve_top_k: K must be >= 1");
  require(static_cast<int64_t>(query.size()) == index.embed_dim,
          ErrorKind::Dimension,
          "retrieve_top_k: query dim " + std::to_string(query.size()) +
              " vs index dim " + std::to_string(index.embed_dim));
  int64_t n = index.count();
  std::vector<std::pair<double, int64_t>> scored;  // (score, row)
  scored.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    if (index.passages[i].id == exclude_id) continue;
    const double* r = index.row(i);
    double s = 0.0;
    for (int64_t j = 0; j < index.embed_dim; ++j) s += query[j] * r[j];
    scored.emplace_back(s, i);
  }
  ScoredPassageSet out;
  out.query = query;
  out.truncated = static_cast<int64_t>(scored.size()) < k;
  int64_t take = std::min<int64_t>(k, scored.size());
  auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.passages[a.second].id < index.passages[b.second].id;
  };
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), better);
  for (int64_t i = 0; i < take; ++i)
    out.hits.emplace_back(index.passages[scored[i].second].id, scored[i].first);
  return out;
}

// p_retriever = softmax(s/T) over the retrieved set only.
inline Distribution retriever_distribution(const Tensor& scores, double temperature) {
  require(temperature > 0.0, ErrorKind::Config,
          "retriever_distribution: temperature must be positive");
  require(scores.rank() == 1 && scores.numel() >= 1, ErrorKind::Contract,
          "retriever_distribution: need a nonempty score vector");
  return {softmax_rows(scale(scores, 1.0 / temperature)),
          DistributionRole::retriever};
}

inline Distribution retriever_distribution(const ScoredPassageSet& set,
                                           double temperature) {
  require(!set.hits.empty(), ErrorKind::Contract,
          "retriever_distribution: empty retrieval set");
  std::vector<double> s;
  for (auto& [id, score] : set.hits) s.push_back(score);
  NoGradGuard ng;
  return retriever_distribution(
      Tensor::from_data({static_cast<int64_t>(s.size())}, std::move(s)),
      temperature);
}

// p_reader = softmax of per-passage answer log-likelihoods; a detached
// training target by construction (plain doubles in, no graph out).
inline Distribution reader_posterior(const std::vector<double>& log_liks) {
  require(!log_liks.empty(), ErrorKind::Contract, "reader_posterior: empty input");
  for (double v : log_liks)
    require(std::isfinite(v), ErrorKind::Numeric,
            "reader_posterior: non-finite log-likelihood");
  NoGradGuard ng;
  Tensor t = Tensor::from_data({static_cast<int64_t>(log_liks.size())}, log_liks);
  return {softmax_rows(t), DistributionRole::reader_posterior};
}

// KL(p_reader || p_retriever); gradients reach only the retriever side.
inline Tensor retriever_kl_loss(const Distribution& posterior,
                                const Distribution& retriever_dist) {
  require(posterior.role == DistributionRole::reader_posterior &&
              retriever_dist.role == DistributionRole::retriever,
          ErrorKind::Contract, "retriever_kl_loss: roles swapped");
  require(posterior.probs.numel() == retriever_dist.probs.numel(),
          ErrorKind::Contract,
          "retriever_kl_loss: size mismatch " +
              std::to_string(posterior.probs.numel()) + " vs " +
              std::to_string(retriever_dist.probs.numel()));
  return kl_divergence(posterior.probs.detach(), retriever_dist.probs);
}

// ---------------------------------------------------------------------------
// index persistence: RAVENIDX1
// ---------------------------------------------------------------------------

inline std::string encode_index(const VectorIndex& index) {
  std::string out = std::string(kIndexMagic) + "\n" +
                    std::to_string(index.embed_dim) + " " +
                    std::to_string(index.count()) + "\n";
  for (double v : index.rows) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_le32(out, bits);
  }
  for (const auto& p : index.passages) {
    nlohmann::json j{{"id", p.id}, {"title", p.title}, {"text", p.text}};
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline VectorIndex decode_index(const std::string& bytes) {
  size_t pos = 0;
  auto next_line = [&](const char* what) {
    size_t nl = bytes.find('\n', pos);
    require(nl != std::string::npos, ErrorKind::Format,
            std::string("index: missing ") + what + " at byte " +
                std::to_string(pos));
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  require(next_line("magic") == kIndexMagic, ErrorKind::Format,
          "index: bad magic at byte 0");
  size_t hdr_at = pos;
  std::istringstream hdr(next_line("header"));
  int64_t dim = 0, count = 0;
  require(static_cast<bool>(hdr >> dim >> count) && dim > 0 && count >= 0,
          ErrorKind::Format,
          "index: bad header at byte " + std::to_string(hdr_at));
  uint64_t data_bytes = static_cast<uint64_t>(dim) * count * 4;
  require(pos + data_bytes <= bytes.size(), ErrorKind::Format,
          "index: data truncated at byte " + std::to_string(pos));
  VectorIndex index;
  index.embed_dim = dim;
  index.rows.resize(dim * count);
  for (int64_t i = 0; i < dim * count; ++i) {
    uint32_t bits = detail::get_le32(bytes.data() + pos + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    index.rows[i] = static_cast<double>(f);
  }
  pos += data_bytes;
  index.passages = decode_corpus(bytes.substr(pos));
  require(static_cast<int64_t>(index.passages.size()) == count,
          ErrorKind::Format,
          "index: metadata count " + std::to_string(index.passages.size()) +
              " does not match header count " + std::to_string(count));
  return index;
}

inline void save_index(const std::string& path, const VectorIndex& index) {
  write_file(path, encode_index(index));
}
inline VectorIndex load_index(const std::string& path) {
  return decode_index(read_file(path));
}

}  // namespace raven
