#pragma once

// Word-level tokenizer with the reserved ids the corruption and prompting
// code depend on: <pad>=0, </s>=1, <unk>=2, then 100 sentinels
// <extra_id_0..99> at ids 3..102. Open vocabulary comes from the corpus,
// lowercased, with every punctuation character its own token. "<extra_id_N>"
// is recognized as a single token wherever it appears in text.

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "raven/error.hpp"

namespace raven {

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kNumSentinels = 100;
  static constexpr int kReservedCount = 3 + kNumSentinels;

  static int sentinel_id(int k) {
    require(k >= 0 && k < kNumSentinels, ErrorKind::Contract,
            "sentinel index " + std::to_string(k) + " outside [0,100)");
    return 3 + k;
  }
  static bool is_sentinel(int id) { return id >= 3 && id < kReservedCount; }
  static bool is_reserved(int id) { return id >= 0 && id < kReservedCount; }
  static std::string sentinel_text(int k) {
    return "<extra_id_" + std::to_string(sentinel_id(k) - 3) + ">";
  }

  // Lowercase word/punctuation split; sentinel literals survive as units.
  static std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0, n = text.size();
    while (i < n) {
      unsigned char c = text[i];
      if (std::isspace(c)) {
        ++i;
        continue;
      }
      if (c == '<') {
        size_t k = match_sentinel(text, i);
        if (k != std::string::npos) {
          out.push_back(text.substr(i, k - i));
          i = k;
          continue;
        }
      }
      if (std::isalnum(c)) {
        size_t j = i;
        std::string word;
        while (j < n && std::isalnum(static_cast<unsigned char>(text[j]))) {
          word.push_back(static_cast<char>(std::tolower(
              static_cast<unsigned char>(text[j]))));
          ++j;
        }
        out.push_back(std::move(word));
        i = j;
      } else {
        out.push_back(std::string(1, static_cast<char>(c)));
        ++i;
      }
    }
    return out;
  }

  // Vocabulary = reserved ids, then the sorted unique non-reserved tokens of
  // `texts`. Sorting makes the mapping independent of input order.
  static Tokenizer build(const std::vector<std::string>& texts) {
    Tokenizer tk;
    std::map<std::string, int> seen;
    for (const auto& t : texts)
      for (auto& w : split_words(t))
        if (tk.ids_.find(w) == tk.ids_.end()) seen.emplace(std::move(w), 0);
    for (auto& [w, _] : seen) tk.push_token(w);
    return tk;
  }

  Tokenizer() {
    push_token("<pad>");
    push_token("</s>");
    push_token("<unk>");
    for (int k = 0; k < kNumSentinels; ++k) push_token(sentinel_text(k));
  }

  int vocab_size() const { return static_cast<int>(tokens_.size()); }

  int id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool has(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token(int id) const {
    require(id >= 0 && id < vocab_size(), ErrorKind::Contract,
            "token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(vocab_size()));
    return tokens_[id];
  }

  std::vector<int> encode(const std::string& text, bool add_eos = false) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id_of(w));
    if (add_eos) ids.push_back(kEos);
    return ids;
  }

  // Space-joined token text; pad and eos are dropped, sentinels and words
  // render literally.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id == kPad || id == kEos) continue;
      if (!out.empty()) out += " ";
      out += token(id);
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "RAVENVOCAB1\n" << (vocab_size() - kReservedCount) << "\n";
    for (int id = kReservedCount; id < vocab_size(); ++id)
      os << tokens_[id] << "\n";
    return os.str();
  }

  static Tokenizer deserialize(const std::string& bytes) {
    std::istringstream is(bytes);
    std::string magic;
    require(std::getline(is, magic) && magic == "RAVENVOCAB1",
            ErrorKind::Format, "vocabulary: bad magic");
    std::string count_line;
    require(static_cast<bool>(std::getline(is, count_line)), ErrorKind::Format,
            "vocabulary: missing count");
    int count = 0;
    try {
      count = std::stoi(count_line);
    } catch (...) {
      raise(ErrorKind::Format, "vocabulary: bad count '" + count_line + "'");
    }
    Tokenizer tk;
    for (int i = 0; i < count; ++i) {
      std::string tok;
      require(static_cast<bool>(std::getline(is, tok)) && !tok.empty(),
              ErrorKind::Format,
              "vocabulary: truncated at entry " + std::to_string(i));
      require(tk.ids_.find(tok) == tk.ids_.end(), ErrorKind::Format,
              "vocabulary: duplicate token '" + tok + "'");
      tk.push_token(tok);
    }
    return tk;
  }

 private:
  static size_t match_sentinel(const std::string& text, size_t i) {
    static const std::string prefix = "<extra_id_";
    if (text.compare(i, prefix.size(), prefix) != 0) return std::string::npos;
    size_t j = i + prefix.size(), start = j;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])))
      ++j;
    if (j == start || j >= text.size() || text[j] != '>')
      return std::string::npos;
    if (j - start > 1 && text[start] == '0') return std::string::npos;
    int k = std::stoi(text.substr(start, j - start));
    if (k >= kNumSentinels) return std::string::npos;
    return j + 1;
  }

  void push_token(const std::string& t) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace raven
