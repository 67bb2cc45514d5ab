#pragma once

// Pretraining data construction: span masking, suffix masking and the mixed
// objective. All three keep the reconstruction property — splicing the
// target's spans back into the corrupted text recovers the original token
// sequence exactly — and report the visible text (sentinels stripped) as the
// retrieval query so the target never leaks into retrieval.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "raven/error.hpp"
#include "raven/rng.hpp"
#include "raven/tokenizer.hpp"

namespace raven {

enum class Objective { mask, prefix, mix };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::mask: return "mask";
    case Objective::prefix: return "prefix";
    default: return "mix";
  }
}

struct CorruptedSample {
  std::vector<int> encoder_tokens;   // visible text with sentinel ids
  std::vector<int> target;           // sentinel-delimited spans, ends with eos
  std::vector<int> retrieval_query;  // visible tokens, sentinels stripped
  Objective objective = Objective::mask;
};

namespace detail {

// `total` split into `parts` nonnegative chunks; sorted random cuts.
inline std::vector<int64_t> split_nonneg(int64_t total, int64_t parts, Rng& rng) {
  std::vector<int64_t> cuts{0, total};
  for (int64_t i = 0; i < parts - 1; ++i)
    cuts.push_back(uniform_int(rng, 0, total));
  std::sort(cuts.begin(), cuts.end());
  std::vector<int64_t> out(parts);
  for (int64_t i = 0; i < parts; ++i) out[i] = cuts[i + 1] - cuts[i];
  return out;
}

// Geometric suffix length with mean `expected_fraction * n`, clamped to
// [1, n-1].
inline int64_t draw_suffix_len(int64_t n, double expected_fraction, Rng& rng) {
  double mean = expected_fraction * static_cast<double>(n);
  double p = std::min(1.0, 1.0 / std::max(1.0, mean));
  std::geometric_distribution<int64_t> g(p);
  return std::min<int64_t>(1 + g(rng), n - 1);
}

// Core span corruption over `tokens`, writing sentinels `first_sentinel`,
// `first_sentinel+1`, …; shared by mask_spans and mix_corrupt.
inline CorruptedSample corrupt_spans(const std::vector<int>& tokens,
                                     double mask_rate, double mean_span_len,
                                     Rng& rng, int first_sentinel,
                                     int max_sentinels) {
  int64_t n = static_cast<int64_t>(tokens.size());
  CorruptedSample out;
  out.objective = Objective::mask;
  if (mask_rate == 0.0) {
    out.encoder_tokens = tokens;
    out.retrieval_query = tokens;
    return out;
  }
  int64_t noise =
      std::clamp<int64_t>(std::llround(mask_rate * double(n)), 1, n - 1);
  int64_t spans = std::clamp<int64_t>(
      std::llround(double(noise) / mean_span_len), 1,
      std::min<int64_t>({noise, max_sentinels, n - noise + 1}));
  // span lengths: positive parts summing to `noise`
  std::vector<int64_t> span_lens = split_nonneg(noise - spans, spans, rng);
  for (auto& l : span_lens) l += 1;
  // gaps: interior ones at least 1 so spans use distinct sentinels
  std::vector<int64_t> gaps =
      split_nonneg(n - noise - (spans - 1), spans + 1, rng);
  for (int64_t i = 1; i < spans; ++i) gaps[i] += 1;

  int64_t pos = 0;
  for (int64_t s = 0; s < spans; ++s) {
    for (int64_t i = 0; i < gaps[s]; ++i) {
      out.encoder_tokens.push_back(tokens[pos]);
      out.retrieval_query.push_back(tokens[pos]);
      ++pos;
    }
    int sentinel = Tokenizer::sentinel_id(first_sentinel + static_cast<int>(s));
    out.encoder_tokens.push_back(sentinel);
    out.target.push_back(sentinel);
    for (int64_t i = 0; i < span_lens[s]; ++i) {
      out.target.push_back(tokens[pos]);
      ++pos;
    }
  }
  for (int64_t i = 0; i < gaps[spans]; ++i) {
    out.encoder_tokens.push_back(tokens[pos]);
    out.retrieval_query.push_back(tokens[pos]);
    ++pos;
  }
  return out;
}

}  // namespace detail

// T5-style span corruption: exactly round(mask_rate * len) tokens masked in
// non-overlapping spans of mean length `mean_span_len`, replaced left to
// right by <extra_id_0>, <extra_id_1>, … Sequences shorter than 8 tokens are
// skipped (empty optional).
inline std::optional<CorruptedSample> mask_spans(const std::vector<int>& tokens,
                                                 double mask_rate,
                                                 double mean_span_len,
                                                 Rng& rng) {
  require(mask_rate >= 0.0 && mask_rate < 1.0, ErrorKind::Config,
          "mask_spans: mask_rate must be in [0,1)");
  require(mean_span_len >= 1.0, ErrorKind::Config,
          "mask_spans: mean_span_len must be >= 1");
  if (tokens.size() < 8) return std::nullopt;
  CorruptedSample out = detail::corrupt_spans(tokens, mask_rate, mean_span_len,
                                              rng, 0, Tokenizer::kNumSentinels);
  if (!out.target.empty()) out.target.push_back(Tokenizer::kEos);
  return out;
}

inline std::optional<CorruptedSample> mask_spans(const std::vector<int>& tokens,
                                                 Rng& rng) {
  return mask_spans(tokens, 0.15, 3.0, rng);
}

// Prefix-LM corruption: the suffix (10% of tokens on average) is replaced by
// a single <extra_id_0>; the target restates the sentinel and the suffix.
// The retrieval query is the bare prefix, so the answer cannot leak.
inline std::optional<CorruptedSample> mask_suffix(const std::vector<int>& tokens,
                                                  double expected_fraction,
                                                  Rng& rng) {
  require(expected_fraction > 0.0 && expected_fraction < 1.0, ErrorKind::Config,
          "mask_suffix: expected_fraction must be in (0,1)");
  if (tokens.size() < 10) return std::nullopt;
  int64_t n = static_cast<int64_t>(tokens.size());
  int64_t suffix_len = detail::draw_suffix_len(n, expected_fraction, rng);
  CorruptedSample out;
  out.objective = Objective::prefix;
  out.encoder_tokens.assign(tokens.begin(), tokens.end() - suffix_len);
  out.retrieval_query = out.encoder_tokens;
  out.encoder_tokens.push_back(Tokenizer::sentinel_id(0));
  out.target.push_back(Tokenizer::sentinel_id(0));
  out.target.insert(out.target.end(), tokens.end() - suffix_len, tokens.end());
  out.target.push_back(Tokenizer::kEos);
  return out;
}

inline std::optional<CorruptedSample> mask_suffix(const std::vector<int>& tokens,
                                                  Rng& rng) {
  return mask_suffix(tokens, 0.10, rng);
}

// Both corruptions at once: spans over the prefix region plus a suffix mask
// carried by the reserved final sentinel, so span sentinels stay increasing
// and distinct from the suffix marker. `include_suffix=false` reduces to
// mask_spans exactly.
inline std::optional<CorruptedSample> mix_corrupt(const std::vector<int>& tokens,
                                                  Rng& rng,
                                                  bool include_suffix = true) {
  if (!include_suffix) {
    auto out = mask_spans(tokens, 0.15, 3.0, rng);
    if (out) out->objective = Objective::mix;
    return out;
  }
  if (tokens.size() < 10) return std::nullopt;
  int64_t n = static_cast<int64_t>(tokens.size());
  int64_t suffix_len = detail::draw_suffix_len(n, 0.10, rng);
  std::vector<int> prefix(tokens.begin(), tokens.end() - suffix_len);
  if (prefix.size() < 8) return std::nullopt;
  CorruptedSample out = detail::corrupt_spans(prefix, 0.15, 3.0, rng, 0,
                                              Tokenizer::kNumSentinels - 1);
  out.objective = Objective::mix;
  int suffix_sentinel = Tokenizer::sentinel_id(Tokenizer::kNumSentinels - 1);
  out.encoder_tokens.push_back(suffix_sentinel);
  out.target.push_back(suffix_sentinel);
  out.target.insert(out.target.end(), tokens.end() - suffix_len, tokens.end());
  out.target.push_back(Tokenizer::kEos);
  return out;
}

// Fraction of the original tokens hidden behind sentinels; used by the
// statistical checks.
inline double masked_fraction(const CorruptedSample& sample,
                              size_t original_len) {
  int64_t masked = 0;
  for (int t : sample.target)
    if (!Tokenizer::is_sentinel(t) && t != Tokenizer::kEos) ++masked;
  return static_cast<double>(masked) / static_cast<double>(original_len);
}

}  // namespace raven
