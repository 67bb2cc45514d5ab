// raven command-line driver: one binary, seven subcommands, covering corpus
// generation, index building, two-stage training, evaluation sweeps, greedy
// generation, the attention-cost benchmark, and prompt inspection.
//
// Every run writes a manifest (resolved config + seed + version) so it can be
// replayed exactly. Value precedence: command-line flag > --config file value
// > built-in default. RAVEN_SEED serves as an environment fallback for --seed.
// Exit codes: 0 success, 2 usage error, 3 any violated invariant.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "raven/corpus.hpp"
#include "raven/corruption.hpp"
#include "raven/error.hpp"
#include "raven/eval.hpp"
#include "raven/parallel.hpp"
#include "raven/prompting.hpp"
#include "raven/reader.hpp"
#include "raven/retriever.hpp"
#include "raven/rng.hpp"
#include "raven/synthetic.hpp"
#include "raven/tokenizer.hpp"
#include "raven/trainer.hpp"

namespace {

using nlohmann::json;

// Commands never rewrite what they read; an output aimed at an input (or two
// outputs aimed at one path) is a config error before any work starts.
void require_fresh_outputs(const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  namespace fs = std::filesystem;
  for (size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = outputs[i];
    if (out.empty()) continue;
    fs::path canon = fs::weakly_canonical(fs::path(out));
    for (const auto& in : inputs) {
      if (in.empty()) continue;
      if (canon == fs::weakly_canonical(fs::path(in)))
        raven::raise(raven::ErrorKind::Config,
                     "output path '" + out + "' would overwrite input '" + in +
                         "'");
    }
    for (size_t j = i + 1; j < outputs.size(); ++j) {
      if (outputs[j].empty()) continue;
      if (canon == fs::weakly_canonical(fs::path(outputs[j])))
        raven::raise(raven::ErrorKind::Config,
                     "two outputs aim at the same path: '" + out + "'");
    }
  }
}

void write_manifest(const std::string& path, json config, uint64_t seed,
                    std::vector<std::string> checkpoints = {},
                    std::string loss_log = "") {
  raven::RunManifest m;
  m.config = std::move(config);
  m.seed = seed;
  m.checkpoints = std::move(checkpoints);
  m.loss_log_path = std::move(loss_log);
  raven::write_file(path, m.to_json().dump(2) + "\n");
}

raven::Tokenizer load_tokenizer(const std::string& path) {
  return raven::Tokenizer::deserialize(raven::read_file(path));
}

// Words the prompt templates add on top of the corpus text, so a vocabulary
// built at gen-corpus time can tokenize every prompt without <unk>.
const char* kPromptScaffold =
    "question : answer : title : context : options ( a ) ( b ) ( c ) ( d )";

// ---------------------------------------------------------------------------
// Model geometry: flags <-> configs <-> checkpoint metadata
// ---------------------------------------------------------------------------

struct ModelFlags {
  int d_model = 128;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 256;
  int max_encoder_len = 384;
  int max_decoder_len = 64;
  int embed_dim = 64;
  int retriever_heads = 4;
  int retriever_layers = 2;
  int retriever_ff = 128;
  int retriever_max_len = 512;
  double temperature = 0.1;
  int top_k = 5;

  void attach(CLI::App* cmd) {
    cmd->add_option("--d-model", d_model, "reader model width")
        ->capture_default_str();
    cmd->add_option("--heads", n_heads, "reader attention heads")
        ->capture_default_str();
    cmd->add_option("--enc-layers", enc_layers, "reader encoder layers")
        ->capture_default_str();
    cmd->add_option("--dec-layers", dec_layers, "reader decoder layers")
        ->capture_default_str();
    cmd->add_option("--d-ff", d_ff, "reader feed-forward width")
        ->capture_default_str();
    cmd->add_option("--max-encoder-len", max_encoder_len,
                    "per-passage encoder token limit")
        ->capture_default_str();
    cmd->add_option("--max-decoder-len", max_decoder_len,
                    "decoder token limit")
        ->capture_default_str();
    cmd->add_option("--embed-dim", embed_dim, "retriever embedding width")
        ->capture_default_str();
    cmd->add_option("--retriever-heads", retriever_heads,
                    "retriever attention heads")
        ->capture_default_str();
    cmd->add_option("--retriever-layers", retriever_layers,
                    "retriever encoder layers")
        ->capture_default_str();
    cmd->add_option("--retriever-ff", retriever_ff,
                    "retriever feed-forward width")
        ->capture_default_str();
    cmd->add_option("--temperature", temperature,
                    "retriever score softmax temperature")
        ->capture_default_str();
    cmd->add_option("--top-k", top_k, "retriever default top-k")
        ->capture_default_str();
  }

  raven::ReaderConfig reader_config(int vocab) const {
    raven::ReaderConfig rc;
    rc.vocab_size = vocab;
    rc.d_model = d_model;
    rc.n_heads = n_heads;
    rc.n_enc_layers = enc_layers;
    rc.n_dec_layers = dec_layers;
    rc.d_ff = d_ff;
    rc.max_encoder_len = max_encoder_len;
    rc.max_decoder_len = max_decoder_len;
    return rc;
  }

  raven::RetrieverConfig retriever_config(int vocab) const {
    raven::RetrieverConfig qc;
    qc.vocab_size = vocab;
    qc.embed_dim = embed_dim;
    qc.n_heads = retriever_heads;
    qc.n_layers = retriever_layers;
    qc.d_ff = retriever_ff;
    qc.max_len = retriever_max_len;
    qc.temperature = temperature;
    qc.top_k = top_k;
    return qc;
  }
};

std::map<std::string, std::string> model_meta(const raven::ReaderConfig& rc,
                                              const raven::RetrieverConfig& qc) {
  return {{"reader.vocab_size", std::to_string(rc.vocab_size)},
          {"reader.d_model", std::to_string(rc.d_model)},
          {"reader.n_heads", std::to_string(rc.n_heads)},
          {"reader.n_enc_layers", std::to_string(rc.n_enc_layers)},
          {"reader.n_dec_layers", std::to_string(rc.n_dec_layers)},
          {"reader.d_ff", std::to_string(rc.d_ff)},
          {"reader.max_encoder_len", std::to_string(rc.max_encoder_len)},
          {"reader.max_decoder_len", std::to_string(rc.max_decoder_len)},
          {"retriever.embed_dim", std::to_string(qc.embed_dim)},
          {"retriever.n_heads", std::to_string(qc.n_heads)},
          {"retriever.n_layers", std::to_string(qc.n_layers)},
          {"retriever.d_ff", std::to_string(qc.d_ff)},
          {"retriever.max_len", std::to_string(qc.max_len)},
          {"retriever.temperature", std::to_string(qc.temperature)},
          {"retriever.top_k", std::to_string(qc.top_k)}};
}

int meta_int(const std::map<std::string, std::string>& meta,
             const std::string& key) {
  auto it = meta.find(key);
  raven::require(it != meta.end(), raven::ErrorKind::Format,
                 "checkpoint metadata is missing '" + key + "'");
  try {
    return std::stoi(it->second);
  } catch (...) {
    raven::raise(raven::ErrorKind::Format,
                 "checkpoint metadata '" + key + "' is not a number: '" +
                     it->second + "'");
  }
}

double meta_double(const std::map<std::string, std::string>& meta,
                   const std::string& key) {
  auto it = meta.find(key);
  raven::require(it != meta.end(), raven::ErrorKind::Format,
                 "checkpoint metadata is missing '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (...) {
    raven::raise(raven::ErrorKind::Format,
                 "checkpoint metadata '" + key + "' is not a number: '" +
                     it->second + "'");
  }
}

// Rebuild both model configs from a checkpoint's metadata so evaluation
// cannot silently run with mismatched geometry.
std::pair<raven::ReaderConfig, raven::RetrieverConfig> configs_from_checkpoint(
    const raven::Checkpoint& ckpt, int vocab) {
  raven::ReaderConfig rc;
  rc.vocab_size = meta_int(ckpt.meta, "reader.vocab_size");
  raven::require(rc.vocab_size == vocab, raven::ErrorKind::Config,
                 "checkpoint vocabulary size " + std::to_string(rc.vocab_size) +
                     " does not match the loaded vocabulary (" +
                     std::to_string(vocab) + ")");
  rc.d_model = meta_int(ckpt.meta, "reader.d_model");
  rc.n_heads = meta_int(ckpt.meta, "reader.n_heads");
  rc.n_enc_layers = meta_int(ckpt.meta, "reader.n_enc_layers");
  rc.n_dec_layers = meta_int(ckpt.meta, "reader.n_dec_layers");
  rc.d_ff = meta_int(ckpt.meta, "reader.d_ff");
  rc.max_encoder_len = meta_int(ckpt.meta, "reader.max_encoder_len");
  rc.max_decoder_len = meta_int(ckpt.meta, "reader.max_decoder_len");

  raven::RetrieverConfig qc;
  qc.vocab_size = vocab;
  qc.embed_dim = meta_int(ckpt.meta, "retriever.embed_dim");
  qc.n_heads = meta_int(ckpt.meta, "retriever.n_heads");
  qc.n_layers = meta_int(ckpt.meta, "retriever.n_layers");
  qc.d_ff = meta_int(ckpt.meta, "retriever.d_ff");
  qc.max_len = meta_int(ckpt.meta, "retriever.max_len");
  qc.temperature = meta_double(ckpt.meta, "retriever.temperature");
  qc.top_k = meta_int(ckpt.meta, "retriever.top_k");
  return {rc, qc};
}

struct LoadedModels {
  raven::Reader reader;
  raven::Retriever retriever;
};

LoadedModels load_models(const std::string& checkpoint_path,
                         const raven::Tokenizer& tok, uint64_t seed) {
  raven::Checkpoint ckpt = raven::load_checkpoint(checkpoint_path);
  auto [rc, qc] = configs_from_checkpoint(ckpt, tok.vocab_size());
  LoadedModels m{raven::Reader(rc, seed), raven::Retriever(qc, seed)};
  raven::load_into(m.reader.params(),
                   raven::detail::filter_checkpoint(ckpt, "reader."));
  raven::load_into(m.retriever.params(),
                   raven::detail::filter_checkpoint(ckpt, "retriever."));
  return m;
}

std::vector<raven::QaPair> split_of(const std::vector<raven::QaPair>& qa,
                                    const std::string& name) {
  std::vector<raven::QaPair> out;
  for (const auto& pair : qa)
    if (pair.split == name) out.push_back(pair);
  return out;
}

raven::VectorIndex build_index(const raven::Retriever& retriever,
                               const raven::Tokenizer& tok,
                               const raven::Corpus& corpus) {
  std::vector<std::vector<int>> texts;
  texts.reserve(corpus.size());
  for (const auto& p : corpus) texts.push_back(tok.encode(p.title + " " + p.text));
  return retriever.refresh_index(corpus, texts);
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  int64_t entities = 50;
  int64_t attributes = 4;
  double heldout = 0.2;
  std::string corpus_path = "corpus.jsonl";
  std::string qa_path = "qa.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string manifest = "gen-corpus-manifest.json";
};

void run_gen_corpus(const GenCorpusArgs& a, uint64_t seed) {
  require_fresh_outputs({}, {a.corpus_path, a.qa_path, a.vocab_path, a.manifest});
  raven::SyntheticWorld world =
      raven::make_synthetic_corpus(a.entities, a.attributes, seed, a.heldout);

  std::vector<std::string> texts{kPromptScaffold};
  for (const auto& p : world.corpus) {
    texts.push_back(p.title);
    texts.push_back(p.text);
  }
  for (const auto& qa : world.qa) {
    texts.push_back(qa.question);
    texts.push_back(qa.answer);
  }
  raven::Tokenizer tok = raven::Tokenizer::build(texts);

  raven::save_corpus(a.corpus_path, world.corpus);
  raven::save_qa(a.qa_path, world.qa);
  raven::write_file(a.vocab_path, tok.serialize());
  write_manifest(a.manifest,
                 json{{"command", "gen-corpus"},
                      {"entities", a.entities},
                      {"attributes", a.attributes},
                      {"heldout", a.heldout},
                      {"corpus", a.corpus_path},
                      {"qa", a.qa_path},
                      {"vocab", a.vocab_path}},
                 seed);
  std::printf("wrote %s (%zu passages), %s (%zu pairs), %s (%d tokens)\n",
              a.corpus_path.c_str(), world.corpus.size(), a.qa_path.c_str(),
              world.qa.size(), a.vocab_path.c_str(), tok.vocab_size());
}

struct BuildIndexArgs {
  std::string corpus_path = "corpus.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string checkpoint;  // optional: retriever weights
  std::string index_path = "index.bin";
  std::string manifest = "build-index-manifest.json";
};

void run_build_index(const BuildIndexArgs& a, const ModelFlags& mf,
                     uint64_t seed) {
  require_fresh_outputs({a.corpus_path, a.vocab_path, a.checkpoint},
                        {a.index_path, a.manifest});
  raven::Corpus corpus = raven::load_corpus(a.corpus_path);
  raven::Tokenizer tok = load_tokenizer(a.vocab_path);

  raven::VectorIndex index = [&] {
    if (!a.checkpoint.empty()) {
      LoadedModels m = load_models(a.checkpoint, tok, seed);
      return build_index(m.retriever, tok, corpus);
    }
    raven::Retriever retriever(mf.retriever_config(tok.vocab_size()), seed);
    return build_index(retriever, tok, corpus);
  }();

  raven::save_index(a.index_path, index);
  write_manifest(a.manifest,
                 json{{"command", "build-index"},
                      {"corpus", a.corpus_path},
                      {"vocab", a.vocab_path},
                      {"checkpoint", a.checkpoint},
                      {"index", a.index_path},
                      {"embed_dim", index.embed_dim}},
                 seed);
  std::printf("wrote %s (%lld rows, dim %lld)\n", a.index_path.c_str(),
              static_cast<long long>(index.count()),
              static_cast<long long>(index.embed_dim));
}

struct TrainArgs {
  std::string corpus_path = "corpus.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string stage = "mask_joint";
  std::string init_checkpoint;    // resume weights
  std::string stage1_checkpoint;  // required by prefix_frozen
  std::string checkpoint_out = "model.ckpt";
  std::string loss_log = "loss.jsonl";
  std::string manifest = "train-manifest.json";
  bool keep_identical = false;
  raven::TrainConfig cfg;
};

void run_train(TrainArgs& a, const ModelFlags& mf, uint64_t seed) {
  require_fresh_outputs(
      {a.corpus_path, a.vocab_path, a.init_checkpoint, a.stage1_checkpoint},
      {a.checkpoint_out, a.loss_log, a.manifest});
  a.cfg.stage = raven::parse_stage(a.stage);
  a.cfg.seed = seed;
  a.cfg.validate();

  raven::Corpus corpus = raven::load_corpus(a.corpus_path);
  raven::Tokenizer tok = load_tokenizer(a.vocab_path);

  // Geometry comes from whichever checkpoint seeds the run, else from flags.
  const std::string& geometry_source =
      !a.init_checkpoint.empty() ? a.init_checkpoint : a.stage1_checkpoint;
  raven::ReaderConfig rc;
  raven::RetrieverConfig qc;
  if (!geometry_source.empty()) {
    raven::Checkpoint ckpt = raven::load_checkpoint(geometry_source);
    std::tie(rc, qc) = configs_from_checkpoint(ckpt, tok.vocab_size());
  } else {
    rc = mf.reader_config(tok.vocab_size());
    qc = mf.retriever_config(tok.vocab_size());
  }
  qc.exclude_identical = !a.keep_identical;
  raven::Reader reader(rc, seed);
  raven::Retriever retriever(qc, seed);
  if (!a.init_checkpoint.empty())
    raven::load_model_checkpoint(a.init_checkpoint, reader, retriever);

  raven::TrainResult result = raven::train_variant(
      reader, retriever, tok, corpus, a.cfg, a.stage1_checkpoint);

  raven::save_model_checkpoint(a.checkpoint_out, reader, retriever,
                               model_meta(rc, qc));
  raven::write_file(a.loss_log, raven::encode_loss_log(result.log));

  result.manifest.config["command"] = "train";
  result.manifest.config["keep_identical"] = a.keep_identical;
  result.manifest.config["corpus"] = a.corpus_path;
  result.manifest.config["vocab"] = a.vocab_path;
  result.manifest.config["init_checkpoint"] = a.init_checkpoint;
  result.manifest.config["stage1_checkpoint"] = a.stage1_checkpoint;
  result.manifest.checkpoints.push_back(a.checkpoint_out);
  result.manifest.loss_log_path = a.loss_log;
  raven::write_file(a.manifest, result.manifest.to_json().dump(2) + "\n");

  double first = result.log.empty() ? 0.0 : result.log.front().total;
  double last = result.log.empty() ? 0.0 : result.log.back().total;
  std::printf("trained %s for %lld steps: loss %.4f -> %.4f; wrote %s\n",
              a.stage.c_str(), static_cast<long long>(a.cfg.steps), first,
              last, a.checkpoint_out.c_str());
}

struct EvalArgs {
  std::string corpus_path = "corpus.jsonl";
  std::string qa_path = "qa.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string checkpoint = "model.ckpt";
  std::string index_path;  // optional prebuilt index
  std::string split = "heldout";
  std::string demo_split = "train";
  std::string mode = "standard";
  std::string position = "last";
  int64_t shots = 0;
  int64_t m_fusion = 0;
  int64_t passages = 5;
  int max_new = 8;
  bool retrieve_examples = false;
  std::string axis;
  std::string values;
  std::string csv_out = "eval.csv";
  std::string records_out = "records.jsonl";
  std::string manifest = "eval-manifest.json";
};

void run_eval(const EvalArgs& a, uint64_t seed) {
  require_fresh_outputs(
      {a.corpus_path, a.qa_path, a.vocab_path, a.checkpoint, a.index_path},
      {a.csv_out, a.records_out, a.manifest});
  raven::Corpus corpus = raven::load_corpus(a.corpus_path);
  std::vector<raven::QaPair> qa = raven::load_qa(a.qa_path);
  raven::Tokenizer tok = load_tokenizer(a.vocab_path);
  LoadedModels m = load_models(a.checkpoint, tok, seed);

  raven::VectorIndex index = a.index_path.empty()
                                 ? build_index(m.retriever, tok, corpus)
                                 : raven::load_index(a.index_path);

  std::vector<raven::QaPair> eval_set = split_of(qa, a.split);
  std::vector<raven::QaPair> train_pool = split_of(qa, a.demo_split);
  raven::require(!eval_set.empty(), raven::ErrorKind::Config,
                 "eval: no QA pairs in split '" + a.split + "'");

  raven::SweepConfig base;
  base.shots = a.shots;
  base.m_fusion = a.m_fusion;
  base.n_passages = a.passages;
  base.max_new_tokens = a.max_new;
  base.retrieve_examples = a.retrieve_examples;
  base.seed = seed;
  base = raven::apply_axis_value(base, raven::SweepAxis::position, a.position);
  if (a.mode == "ficl") {
    base.mode = raven::AssemblyMode::ficl;
  } else {
    raven::require(a.mode == "standard", raven::ErrorKind::Config,
                   "eval: --mode must be 'standard' or 'ficl'");
  }

  raven::VectorIndex example_index;
  const raven::VectorIndex* example_ptr = nullptr;
  if (a.retrieve_examples) {
    example_index = raven::build_example_index(m.retriever, tok, train_pool);
    example_ptr = &example_index;
  }

  raven::SweepAxis axis = raven::SweepAxis::shots;
  std::vector<std::string> values{std::to_string(a.shots)};
  if (!a.axis.empty()) {
    axis = raven::parse_axis(a.axis);
    raven::require(!a.values.empty(), raven::ErrorKind::Config,
                   "eval: --axis requires --values");
    values = split_csv(a.values);
  }

  std::vector<raven::EvalRecord> records;
  std::vector<raven::SweepRow> rows =
      raven::run_sweep(m.reader, m.retriever, tok, index, eval_set, train_pool,
                       base, axis, values, &records, example_ptr);

  raven::write_file(a.csv_out, raven::encode_sweep_csv(rows));
  raven::write_file(a.records_out, raven::encode_records_jsonl(records));
  write_manifest(a.manifest,
                 json{{"command", "eval"},
                      {"corpus", a.corpus_path},
                      {"qa", a.qa_path},
                      {"vocab", a.vocab_path},
                      {"checkpoint", a.checkpoint},
                      {"index", a.index_path},
                      {"split", a.split},
                      {"demo_split", a.demo_split},
                      {"mode", a.mode},
                      {"position", a.position},
                      {"shots", a.shots},
                      {"m_fusion", a.m_fusion},
                      {"passages", a.passages},
                      {"max_new", a.max_new},
                      {"retrieve_examples", a.retrieve_examples},
                      {"axis", a.axis},
                      {"values", a.values},
                      {"csv", a.csv_out},
                      {"records", a.records_out}},
                 seed);
  for (const auto& row : rows)
    std::printf("%s=%s em=%.4f substring=%.4f n=%lld skipped=%lld\n",
                row.axis.c_str(), row.value.c_str(), row.em, row.substring,
                static_cast<long long>(row.count),
                static_cast<long long>(row.skipped));
}

struct GenerateArgs {
  std::string corpus_path = "corpus.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string checkpoint = "model.ckpt";
  std::string index_path;
  std::string question;
  int64_t passages = 5;
  int max_new = 8;
  std::string manifest = "generate-manifest.json";
};

void run_generate(const GenerateArgs& a, uint64_t seed) {
  raven::require(!a.question.empty(), raven::ErrorKind::Config,
                 "generate: --question must not be empty");
  require_fresh_outputs(
      {a.corpus_path, a.vocab_path, a.checkpoint, a.index_path}, {a.manifest});
  raven::Corpus corpus = raven::load_corpus(a.corpus_path);
  raven::Tokenizer tok = load_tokenizer(a.vocab_path);
  LoadedModels m = load_models(a.checkpoint, tok, seed);
  raven::VectorIndex index = a.index_path.empty()
                                 ? build_index(m.retriever, tok, corpus)
                                 : raven::load_index(a.index_path);

  std::vector<raven::Passage> retrieved;
  {
    raven::NoGradGuard ng;
    raven::Tensor q = m.retriever.embed_text(tok.encode(a.question));
    int64_t k = std::min<int64_t>(a.passages, index.count());
    raven::ScoredPassageSet hits =
        raven::retrieve_top_k(q.data(), index, static_cast<int>(k));
    for (const auto& [id, score] : hits.hits) {
      (void)score;
      for (const auto& p : index.passages)
        if (p.id == id) {
          retrieved.push_back(p);
          break;
        }
    }
  }

  raven::TargetQuery target{a.question, {""}};
  raven::FiCLConfig ficl{0, 1, static_cast<int64_t>(retrieved.size()), seed};
  raven::PromptAssembly assembly = raven::assemble_fid_inputs(
      tok, raven::AssemblyMode::standard, {}, target, retrieved, ficl,
      m.reader.config().max_encoder_len);
  std::vector<int> out = m.reader.generate_greedy(
      assembly.encoder_tokens, a.max_new, {raven::Tokenizer::sentinel_id(0)});
  std::string prediction = raven::detail::decode_generated(tok, out);

  write_manifest(a.manifest,
                 json{{"command", "generate"},
                      {"corpus", a.corpus_path},
                      {"vocab", a.vocab_path},
                      {"checkpoint", a.checkpoint},
                      {"index", a.index_path},
                      {"question", a.question},
                      {"passages", a.passages},
                      {"max_new", a.max_new}},
                 seed);
  for (const auto& p : retrieved)
    std::printf("passage %lld: %s\n", static_cast<long long>(p.id),
                p.title.c_str());
  std::printf("prediction: %s\n", prediction.c_str());
}

struct BenchArgs {
  int64_t max_n = 32;
  int64_t passage_len = 16;
  std::string csv_out = "bench.csv";
  std::string manifest = "bench-manifest.json";
};

void run_bench(const BenchArgs& a, ModelFlags mf, uint64_t seed) {
  raven::require(a.max_n >= 2, raven::ErrorKind::Config,
                 "bench: --max-n must be >= 2");
  require_fresh_outputs({}, {a.csv_out, a.manifest});
  // The concatenation baseline needs room for all passages in one sequence.
  mf.max_encoder_len =
      std::max<int>(mf.max_encoder_len,
                    static_cast<int>(a.max_n * a.passage_len));
  raven::ReaderConfig rc = mf.reader_config(raven::Tokenizer().vocab_size());
  raven::Reader reader(rc, seed);

  std::vector<int64_t> ns;
  for (int64_t n = 1; n <= a.max_n; ++n) ns.push_back(n);
  raven::BenchResult bench =
      raven::bench_fid_scaling(reader, ns, a.passage_len);

  raven::write_file(a.csv_out, raven::encode_bench_csv(bench));
  write_manifest(a.manifest,
                 json{{"command", "bench"},
                      {"max_n", a.max_n},
                      {"passage_len", a.passage_len},
                      {"csv", a.csv_out},
                      {"fid_work_slope", bench.fid_work_slope},
                      {"concat_work_slope", bench.concat_work_slope},
                      {"fid_time_slope", bench.fid_time_slope},
                      {"concat_time_slope", bench.concat_time_slope}},
                 seed);
  std::printf("work slopes: fid %.4f concat %.4f\n", bench.fid_work_slope,
              bench.concat_work_slope);
  std::printf("time slopes: fid %.4f concat %.4f\n", bench.fid_time_slope,
              bench.concat_time_slope);
}

struct DumpPromptsArgs {
  std::string corpus_path = "corpus.jsonl";
  std::string qa_path = "qa.jsonl";
  std::string vocab_path = "vocab.txt";
  std::string split = "heldout";
  std::string demo_split = "train";
  std::string mode = "standard";
  std::string position = "last";
  std::string strategy = "s1";
  int64_t shots = 0;
  int64_t m_fusion = 0;
  int64_t passages = 2;
  int64_t count = 5;
  std::string out_path = "prompts.jsonl";
  std::string manifest = "dump-prompts-manifest.json";
};

void run_dump_prompts(const DumpPromptsArgs& a, uint64_t seed) {
  require_fresh_outputs({a.corpus_path, a.qa_path, a.vocab_path},
                        {a.out_path, a.manifest});
  raven::Corpus corpus = raven::load_corpus(a.corpus_path);
  std::vector<raven::QaPair> qa = raven::load_qa(a.qa_path);
  raven::Tokenizer tok = load_tokenizer(a.vocab_path);

  std::vector<raven::QaPair> targets = split_of(qa, a.split);
  std::vector<raven::QaPair> pool = split_of(qa, a.demo_split);
  raven::require(!targets.empty(), raven::ErrorKind::Config,
                 "dump-prompts: no QA pairs in split '" + a.split + "'");
  raven::require(a.shots <= static_cast<int64_t>(pool.size()),
                 raven::ErrorKind::Config,
                 "dump-prompts: not enough demonstrations for --k");
  raven::require(a.passages <= static_cast<int64_t>(corpus.size()),
                 raven::ErrorKind::Config,
                 "dump-prompts: corpus has fewer passages than --passages");

  raven::AssemblyMode mode = raven::AssemblyMode::standard;
  if (a.mode == "ficl")
    mode = raven::AssemblyMode::ficl;
  else
    raven::require(a.mode == "standard", raven::ErrorKind::Config,
                   "dump-prompts: --mode must be 'standard' or 'ficl'");
  raven::SweepConfig pos_probe;
  pos_probe = raven::apply_axis_value(pos_probe, raven::SweepAxis::position,
                                      a.position);
  raven::PromptStrategy strategy = raven::PromptStrategy::s1;
  if (a.strategy == "s2")
    strategy = raven::PromptStrategy::s2;
  else
    raven::require(a.strategy == "s1", raven::ErrorKind::Config,
                   "dump-prompts: --strategy must be 's1' or 's2'");

  // Deterministic selection: the first k demonstrations and first n passages,
  // so dumps diff cleanly across code changes.
  std::vector<raven::Example> examples;
  for (int64_t i = 0; i < a.shots; ++i)
    examples.push_back({pool[static_cast<size_t>(i)].question,
                        pool[static_cast<size_t>(i)].answer});
  std::vector<raven::Passage> passages(
      corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(a.passages));

  std::string out;
  int64_t emitted = 0;
  for (const auto& qa_pair : targets) {
    if (emitted >= a.count) break;
    raven::TargetQuery target{qa_pair.question, {qa_pair.answer}};
    raven::FiCLConfig ficl{a.shots,
                           a.m_fusion > 0 ? a.m_fusion
                                          : std::max<int64_t>(a.shots, 1),
                           a.passages, raven::mix_seed(seed, emitted)};
    raven::Rng rng = raven::make_rng(raven::mix_seed(seed, emitted, 17));
    raven::PromptAssembly assembly = raven::assemble_fid_inputs(
        tok, mode, examples, target, passages, ficl, 1 << 20, pos_probe.position,
        strategy, &rng);
    out += raven::encode_prompt_dump(assembly, a.mode);
    ++emitted;
  }
  raven::write_file(a.out_path, out);
  write_manifest(a.manifest,
                 json{{"command", "dump-prompts"},
                      {"corpus", a.corpus_path},
                      {"qa", a.qa_path},
                      {"vocab", a.vocab_path},
                      {"split", a.split},
                      {"demo_split", a.demo_split},
                      {"mode", a.mode},
                      {"position", a.position},
                      {"strategy", a.strategy},
                      {"shots", a.shots},
                      {"m_fusion", a.m_fusion},
                      {"passages", a.passages},
                      {"count", emitted},
                      {"out", a.out_path}},
                 seed);
  std::printf("wrote %s (%lld prompts)\n", a.out_path.c_str(),
              static_cast<long long>(emitted));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "raven: retrieval-augmented encoder-decoder workbench.\n"
      "Value precedence: command-line flag > --config file > default."};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "read flag defaults from a TOML/INI file (flags win)");
  app.footer(
      "Every command writes a run manifest with its resolved configuration,\n"
      "seed, and software version; a run is reproducible from its manifest.");

  uint64_t seed = 0;
  int workers = 1;
  app.add_option("--seed", seed, "global seed; falls back to $RAVEN_SEED")
      ->envname("RAVEN_SEED")
      ->capture_default_str();
  app.add_option("--workers", workers,
                 "worker threads (results are identical for any count)")
      ->capture_default_str();

  GenCorpusArgs gen;
  CLI::App* gen_cmd =
      app.add_subcommand("gen-corpus", "generate a synthetic corpus + QA set");
  gen_cmd->fallthrough();
  gen_cmd->add_option("--entities", gen.entities, "number of entities")
      ->capture_default_str();
  gen_cmd->add_option("--attributes", gen.attributes, "facts per entity")
      ->capture_default_str();
  gen_cmd->add_option("--heldout", gen.heldout, "held-out QA fraction")
      ->capture_default_str();
  gen_cmd->add_option("--corpus", gen.corpus_path, "corpus output path")
      ->capture_default_str();
  gen_cmd->add_option("--qa", gen.qa_path, "QA output path")
      ->capture_default_str();
  gen_cmd->add_option("--vocab", gen.vocab_path, "vocabulary output path")
      ->capture_default_str();
  gen_cmd->add_option("--manifest", gen.manifest, "manifest output path")
      ->capture_default_str();

  BuildIndexArgs idx;
  ModelFlags idx_mf;
  CLI::App* idx_cmd =
      app.add_subcommand("build-index", "embed a corpus into a dense index");
  idx_cmd->fallthrough();
  idx_cmd->add_option("--corpus", idx.corpus_path, "corpus input path")
      ->capture_default_str();
  idx_cmd->add_option("--vocab", idx.vocab_path, "vocabulary input path")
      ->capture_default_str();
  idx_cmd->add_option("--checkpoint", idx.checkpoint,
                      "model checkpoint holding retriever weights");
  idx_cmd->add_option("--index", idx.index_path, "index output path")
      ->capture_default_str();
  idx_cmd->add_option("--manifest", idx.manifest, "manifest output path")
      ->capture_default_str();
  idx_mf.attach(idx_cmd);

  TrainArgs tr;
  ModelFlags tr_mf;
  CLI::App* tr_cmd = app.add_subcommand(
      "train", "train reader and retriever on corrupted corpus text");
  tr_cmd->fallthrough();
  tr_cmd->add_option("--corpus", tr.corpus_path, "corpus input path")
      ->capture_default_str();
  tr_cmd->add_option("--vocab", tr.vocab_path, "vocabulary input path")
      ->capture_default_str();
  tr_cmd->add_option(
      "--stage", tr.stage,
      "mask_joint | prefix_frozen | prefix_only | mix_joint")
      ->capture_default_str();
  tr_cmd->add_option("--steps", tr.cfg.steps, "optimizer steps")
      ->capture_default_str();
  tr_cmd->add_option("--batch-size", tr.cfg.batch_size, "samples per step")
      ->capture_default_str();
  tr_cmd->add_option("--lr", tr.cfg.learning_rate, "peak learning rate")
      ->capture_default_str();
  tr_cmd->add_option("--warmup", tr.cfg.warmup_steps, "linear warmup steps")
      ->capture_default_str();
  tr_cmd->add_option("--lambda", tr.cfg.retriever_loss_weight,
                     "weight on the retriever KL term")
      ->capture_default_str();
  tr_cmd->add_option("--train-passages", tr.cfg.n_train_passages,
                     "retrieved passages per training sample")
      ->capture_default_str();
  tr_cmd->add_option("--refresh-every", tr.cfg.index_refresh_every,
                     "steps between index refreshes")
      ->capture_default_str();
  tr_cmd->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW decay")
      ->capture_default_str();
  tr_cmd->add_option("--clip-norm", tr.cfg.clip_norm,
                     "global gradient clip (0 disables)")
      ->capture_default_str();
  tr_cmd->add_option("--init-checkpoint", tr.init_checkpoint,
                     "checkpoint to resume from");
  tr_cmd->add_option("--stage1-checkpoint", tr.stage1_checkpoint,
                     "stage-1 checkpoint (required by prefix_frozen)");
  tr_cmd->add_option("--checkpoint-out", tr.checkpoint_out,
                     "checkpoint output path")
      ->capture_default_str();
  tr_cmd->add_option("--loss-log", tr.loss_log, "loss log output path")
      ->capture_default_str();
  tr_cmd->add_option("--manifest", tr.manifest, "manifest output path")
      ->capture_default_str();
  tr_cmd->add_flag("--keep-identical", tr.keep_identical,
                   "keep the sample's own passage retrievable during "
                   "training (off: the identical passage is excluded)");
  tr_mf.attach(tr_cmd);

  EvalArgs ev;
  CLI::App* ev_cmd =
      app.add_subcommand("eval", "run an evaluation sweep over a QA split");
  ev_cmd->fallthrough();
  ev_cmd->add_option("--corpus", ev.corpus_path, "corpus input path")
      ->capture_default_str();
  ev_cmd->add_option("--qa", ev.qa_path, "QA input path")
      ->capture_default_str();
  ev_cmd->add_option("--vocab", ev.vocab_path, "vocabulary input path")
      ->capture_default_str();
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")
      ->capture_default_str();
  ev_cmd->add_option("--index", ev.index_path,
                     "prebuilt index (default: embed the corpus now)");
  ev_cmd->add_option("--split", ev.split, "QA split to evaluate")
      ->capture_default_str();
  ev_cmd->add_option("--demo-split", ev.demo_split,
                     "QA split supplying demonstrations")
      ->capture_default_str();
  ev_cmd->add_option("--mode", ev.mode, "standard | ficl")
      ->capture_default_str();
  ev_cmd->add_option("--position", ev.position, "first | random | last")
      ->capture_default_str();
  ev_cmd->add_option("--k", ev.shots, "in-context examples per query")
      ->capture_default_str();
  ev_cmd->add_option("--m", ev.m_fusion,
                     "examples per passage under ficl (0: all k)")
      ->capture_default_str();
  ev_cmd->add_option("--passages", ev.passages, "retrieved passages per query")
      ->capture_default_str();
  ev_cmd->add_option("--max-new", ev.max_new, "generation budget in tokens")
      ->capture_default_str();
  ev_cmd->add_flag("--retrieve-examples", ev.retrieve_examples,
                   "retrieve demonstrations by question similarity");
  ev_cmd->add_option("--axis", ev.axis,
                     "sweep axis: shots | passages | position | mode");
  ev_cmd->add_option("--values", ev.values,
                     "comma-separated axis values (mode: 'ficl:K:M')");
  ev_cmd->add_option("--csv", ev.csv_out, "aggregate CSV output path")
      ->capture_default_str();
  ev_cmd->add_option("--records", ev.records_out,
                     "per-query record JSONL output path")
      ->capture_default_str();
  ev_cmd->add_option("--manifest", ev.manifest, "manifest output path")
      ->capture_default_str();

  GenerateArgs gn;
  CLI::App* gn_cmd = app.add_subcommand(
      "generate", "answer one question with retrieved passages");
  gn_cmd->fallthrough();
  gn_cmd->add_option("--corpus", gn.corpus_path, "corpus input path")
      ->capture_default_str();
  gn_cmd->add_option("--vocab", gn.vocab_path, "vocabulary input path")
      ->capture_default_str();
  gn_cmd->add_option("--checkpoint", gn.checkpoint, "model checkpoint")
      ->capture_default_str();
  gn_cmd->add_option("--index", gn.index_path, "prebuilt index");
  gn_cmd->add_option("--question", gn.question, "question text")->required();
  gn_cmd->add_option("--passages", gn.passages, "retrieved passages")
      ->capture_default_str();
  gn_cmd->add_option("--max-new", gn.max_new, "generation budget in tokens")
      ->capture_default_str();
  gn_cmd->add_option("--manifest", gn.manifest, "manifest output path")
      ->capture_default_str();

  BenchArgs bn;
  ModelFlags bn_mf;
  CLI::App* bn_cmd = app.add_subcommand(
      "bench", "measure fused vs concatenated encoder attention cost");
  bn_cmd->fallthrough();
  bn_cmd->add_option("--max-n", bn.max_n, "largest passage count")
      ->capture_default_str();
  bn_cmd->add_option("--passage-len", bn.passage_len, "tokens per passage")
      ->capture_default_str();
  bn_cmd->add_option("--csv", bn.csv_out, "CSV output path")
      ->capture_default_str();
  bn_cmd->add_option("--manifest", bn.manifest, "manifest output path")
      ->capture_default_str();
  bn_mf.attach(bn_cmd);

  DumpPromptsArgs dp;
  CLI::App* dp_cmd = app.add_subcommand(
      "dump-prompts", "emit assembled prompts as JSONL for inspection");
  dp_cmd->fallthrough();
  dp_cmd->add_option("--corpus", dp.corpus_path, "corpus input path")
      ->capture_default_str();
  dp_cmd->add_option("--qa", dp.qa_path, "QA input path")
      ->capture_default_str();
  dp_cmd->add_option("--vocab", dp.vocab_path, "vocabulary input path")
      ->capture_default_str();
  dp_cmd->add_option("--split", dp.split, "QA split supplying targets")
      ->capture_default_str();
  dp_cmd->add_option("--demo-split", dp.demo_split,
                     "QA split supplying demonstrations")
      ->capture_default_str();
  dp_cmd->add_option("--mode", dp.mode, "standard | ficl")
      ->capture_default_str();
  dp_cmd->add_option("--position", dp.position, "first | random | last")
      ->capture_default_str();
  dp_cmd->add_option("--strategy", dp.strategy, "s1 | s2")
      ->capture_default_str();
  dp_cmd->add_option("--k", dp.shots, "in-context examples")
      ->capture_default_str();
  dp_cmd->add_option("--m", dp.m_fusion,
                     "examples per passage under ficl (0: all k)")
      ->capture_default_str();
  dp_cmd->add_option("--passages", dp.passages, "passages per prompt")
      ->capture_default_str();
  dp_cmd->add_option("--count", dp.count, "number of queries to dump")
      ->capture_default_str();
  dp_cmd->add_option("--out", dp.out_path, "JSONL output path")
      ->capture_default_str();
  dp_cmd->add_option("--manifest", dp.manifest, "manifest output path")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: category=usage message=%s\n", e.what());
    return 2;
  }

  try {
    raven::require(workers >= 1, raven::ErrorKind::Config,
                   "--workers must be >= 1");
    raven::set_workers(workers);
    if (gen_cmd->parsed()) run_gen_corpus(gen, seed);
    if (idx_cmd->parsed()) run_build_index(idx, idx_mf, seed);
    if (tr_cmd->parsed()) run_train(tr, tr_mf, seed);
    if (ev_cmd->parsed()) run_eval(ev, seed);
    if (gn_cmd->parsed()) run_generate(gn, seed);
    if (bn_cmd->parsed()) run_bench(bn, bn_mf, seed);
    if (dp_cmd->parsed()) run_dump_prompts(dp, seed);
  } catch (const raven::Error& e) {
    std::fprintf(stderr, "error: category=%s message=%s\n",
                 raven::error_kind_name(e.kind()), e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: category=internal message=%s\n", e.what());
    return 3;
  }
  return 0;
}
