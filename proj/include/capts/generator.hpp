#pragma once

#include <array>
#include <cstdint>

#include "capts/corpus.hpp"

namespace capts {

// Synthetic short-video log with planted channel structure.
//
// Items live in topics. Inside each topic they are partitioned three ways:
// co-consumption bundles, ordered chains and content families. A user's
// interest-driven views pick an anchor from their own past interest views and
// then move to a bundle mate, the chain successor, or a (preferably fresh)
// family member, so each mechanism is visible mainly to one retrieval channel.
// Exploratory views in non-interest topics are short and never become anchors.
struct GeneratorConfig {
  int users = 1000;
  int items = 5000;
  int topics = 30;
  int authors_per_topic = 12;
  int content_dim = 16;
  int days = 10;
  EpochSeconds start_time = 1'700'006'400;  // midnight UTC
  int min_interactions = 220;
  int mean_extra_interactions = 130;
  int session_length = 20;
  int interests_per_user = 3;

  // Share of anchor-driven views routed through (co-consumption, chain
  // adjacency, content family).
  std::array<double, 3> channel_mix = {0.4, 0.3, 0.3};
  double mechanism_boost = 3.0;  // weight multiplier for a topic's primary mechanism
  double seed_rate = 0.08;
  double explore_rate = 0.30;
  double continuation_rate = 0.4;
  int anchor_horizon = 80;

  int bundle_size = 10;
  int chain_length = 8;
  int family_size = 10;
  double coherent_topic_fraction = 0.3;  // topics whose families coincide with bundles
  double fresh_item_fraction = 0.3;      // items created during the log span

  void validate() const;
};

// Latent structure, exposed for tests.
struct PlantedStructure {
  std::vector<std::uint32_t> topic_of;
  std::vector<std::uint32_t> bundle_of;
  std::vector<ItemId> chain_successor;
  std::vector<std::uint32_t> family_of;
};

struct GeneratedCorpus {
  Corpus corpus;
  PlantedStructure planted;
};

GeneratedCorpus generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed);

}  // namespace capts
