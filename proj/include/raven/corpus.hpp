#pragma once

// Corpus and QA record types shared by the retriever, the data pipeline and
// the workbench, with their JSON-lines file formats.

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "raven/checkpoint.hpp"  // read_file / write_file
#include "raven/error.hpp"

namespace raven {

struct Passage {
  int64_t id = 0;
  std::string title;
  std::string text;
};

using Corpus = std::vector<Passage>;

struct QaPair {
  std::string question;
  std::string answer;
  std::string split;  // "train" or "heldout"
};

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, size_t lineno,
                                       const char* what) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  require(!j.is_discarded() && j.is_object(), ErrorKind::Format,
          std::string(what) + ": bad JSON object at line " +
              std::to_string(lineno));
  return j;
}

template <typename Fn>
void for_each_jsonl_line(const std::string& bytes, Fn&& fn) {
  size_t pos = 0, lineno = 0;
  while (pos < bytes.size()) {
    size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) nl = bytes.size();
    ++lineno;
    if (nl > pos) fn(bytes.substr(pos, nl - pos), lineno);
    pos = nl + 1;
  }
}

}  // namespace detail

inline std::string encode_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& p : corpus) {
    nlohmann::json j{{"id", p.id}, {"title", p.title}, {"text", p.text}};
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline Corpus decode_corpus(const std::string& bytes) {
  Corpus corpus;
  detail::for_each_jsonl_line(bytes, [&](const std::string& line, size_t n) {
    nlohmann::json j = detail::parse_jsonl_line(line, n, "corpus");
    require(j.contains("id") && j.contains("title") && j.contains("text"),
            ErrorKind::Format,
            "corpus: missing field at line " + std::to_string(n));
    corpus.push_back({j["id"].get<int64_t>(), j["title"].get<std::string>(),
                      j["text"].get<std::string>()});
  });
  std::set<int64_t> ids;
  for (const auto& p : corpus)
    require(ids.insert(p.id).second, ErrorKind::Format,
            "corpus: duplicate passage id " + std::to_string(p.id));
  return corpus;
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  write_file(path, encode_corpus(corpus));
}
inline Corpus load_corpus(const std::string& path) {
  return decode_corpus(read_file(path));
}

inline std::string encode_qa(const std::vector<QaPair>& qa) {
  std::string out;
  for (const auto& p : qa) {
    nlohmann::json j{
        {"question", p.question}, {"answer", p.answer}, {"split", p.split}};
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline std::vector<QaPair> decode_qa(const std::string& bytes) {
  std::vector<QaPair> qa;
  detail::for_each_jsonl_line(bytes, [&](const std::string& line, size_t n) {
    nlohmann::json j = detail::parse_jsonl_line(line, n, "qa");
    require(j.contains("question") && j.contains("answer") && j.contains("split"),
            ErrorKind::Format, "qa: missing field at line " + std::to_string(n));
    qa.push_back({j["question"].get<std::string>(),
                  j["answer"].get<std::string>(),
                  j["split"].get<std::string>()});
  });
  return qa;
}

inline void save_qa(const std::string& path, const std::vector<QaPair>& qa) {
  write_file(path, encode_qa(qa));
}
inline std::vector<QaPair> load_qa(const std::string& path) {
  return decode_qa(read_file(path));
}

}  // namespace raven
