#pragma once

// Synthetic fact world for training and evaluation runs. Each entity gets one
// passage listing its attribute values; each (entity, attribute) fact yields
// one QA pair. Values are globally unique words, so every answer appears
// verbatim in exactly one passage and retrieval quality is directly
// measurable. Entity names reuse a small adjective/noun pool on purpose:
// near-collisions like "amber falcon" vs "amber heron" keep retrieval from
// being trivial string matching.

#include <cstdint>
#include <string>
#include <vector>

#include "raven/corpus.hpp"
#include "raven/error.hpp"
#include "raven/rng.hpp"

namespace raven {

namespace detail {

inline const std::vector<std::string>& entity_adjectives() {
  static const std::vector<std::string> v = {
      "amber",  "brisk",  "cedar",  "dusty",  "early",  "foggy",  "green",
      "hollow", "iron",   "jolly",  "keen",   "lunar",  "mossy",  "noble",
      "olive",  "pale",   "quiet",  "rusty",  "stony",  "tidal",  "umber",
      "vivid",  "windy",  "young",  "zesty",  "broad",  "chill",  "deep",
      "faint",  "grand",  "high",   "low",    "mild",   "north",  "old",
      "prime",  "rough",  "south",  "tall",   "warm",   "ashen",  "balmy",
      "clear",  "dark",   "east",   "flat",   "gray",   "humid",  "inner",
      "late"};
  return v;
}

inline const std::vector<std::string>& entity_nouns() {
  static const std::vector<std::string> v = {
      "falcon", "harbor", "meadow", "canyon", "willow", "summit", "mesa",
      "orchard", "lagoon", "prairie", "glacier", "thicket", "plateau",
      "estuary", "foothill", "grove",  "heron",  "inlet",  "juniper",
      "knoll",  "lichen",  "marsh",  "nettle", "outpost", "pinnacle",
      "quarry", "ridge",   "spring", "tundra", "upland", "valley",
      "wharf",  "yardang", "zephyr", "basin",  "cliff",  "delta",
      "fjord",  "gulch",   "dune",   "atoll",  "bluff",  "cove",
      "creek",  "gorge",   "hollow", "island", "jetty",  "lake",
      "moor"};
  return v;
}

inline const std::vector<std::string>& attribute_names() {
  static const std::vector<std::string> v = {
      "color",   "metal",   "season", "flavor",  "emblem", "motto",
      "mineral", "garment", "tool",   "vessel",  "beacon", "banner",
      "relic",   "cipher",  "tonic",  "compass"};
  return v;
}

// Base words the unique value tokens are built from, one pool per attribute
// index (wrapping); the appended counter keeps every value distinct.
inline const std::vector<std::string>& value_bases() {
  static const std::vector<std::string> v = {
      "crimson", "cobalt", "saffron", "violet", "emerald", "umbral",
      "argent",  "bronze", "coral",   "ivory",  "obsidian", "pearl",
      "russet",  "sable",  "teal",    "ochre"};
  return v;
}

}  // namespace detail

struct SyntheticWorld {
  Corpus corpus;
  std::vector<QaPair> qa;  // one per fact, tagged "train" or "heldout"
};

// Deterministic under `seed`: same seed, same corpus and QA bytes.
inline SyntheticWorld make_synthetic_corpus(int64_t n_entities,
                                            int64_t n_attributes,
                                            uint64_t seed,
                                            double heldout_fraction = 0.2) {
  const auto& adjs = detail::entity_adjectives();
  const auto& nouns = detail::entity_nouns();
  const auto& attrs = detail::attribute_names();
  require(n_entities >= 1 && n_attributes >= 1, ErrorKind::Config,
          "make_synthetic_corpus: need at least one entity and attribute");
  require(n_entities <= static_cast<int64_t>(adjs.size() * nouns.size()),
          ErrorKind::Config,
          "make_synthetic_corpus: entity namespace exhausted (max " +
              std::to_string(adjs.size() * nouns.size()) + ")");
  require(n_attributes <= static_cast<int64_t>(attrs.size()),
          ErrorKind::Config,
          "make_synthetic_corpus: attribute namespace exhausted (max " +
              std::to_string(attrs.size()) + ")");
  require(heldout_fraction >= 0.0 && heldout_fraction < 1.0, ErrorKind::Config,
          "make_synthetic_corpus: heldout_fraction must be in [0,1)");

  Rng rng = make_rng(seed);

  // Entity names: shuffled (adjective, noun) combinations, first n.
  std::vector<int64_t> combos(adjs.size() * nouns.size());
  for (size_t i = 0; i < combos.size(); ++i) combos[i] = int64_t(i);
  shuffle_vec(combos, rng);
  std::vector<std::string> names(n_entities);
  for (int64_t e = 0; e < n_entities; ++e) {
    int64_t c = combos[e];
    names[e] = adjs[c / nouns.size()] + " " + nouns[c % nouns.size()];
  }

  SyntheticWorld world;
  const auto& bases = detail::value_bases();
  int64_t fact_counter = 0;
  for (int64_t e = 0; e < n_entities; ++e) {
    std::string text;
    for (int64_t a = 0; a < n_attributes; ++a) {
      size_t base = uniform_int(rng, size_t{0}, bases.size() - 1);
      std::string value = bases[base] + std::to_string(fact_counter++);
      if (!text.empty()) text += " . ";
      text += "the " + attrs[a] + " of " + names[e] + " is " + value;
      QaPair qa;
      qa.question = "what is the " + attrs[a] + " of " + names[e] + " ?";
      qa.answer = value;
      qa.split = uniform_real(rng, 0.0, 1.0) < heldout_fraction ? "heldout"
                                                                : "train";
      world.qa.push_back(std::move(qa));
    }
    Passage p;
    p.id = e;
    p.title = names[e];
    p.text = std::move(text);
    world.corpus.push_back(std::move(p));
  }
  return world;
}

}  // namespace raven
