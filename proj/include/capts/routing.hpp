#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "capts/catr.hpp"
#include "capts/corpus.hpp"

namespace capts {

struct RoutingConfig {
  std::array<int, kAllChannels.size()> budgets = {8, 8, 8};  // B_c, indexed by ChannelId
  double eta = 0.2;
  double nic_rise_factor = 1.5;
  double nic_recent_fraction = 0.25;

  int budget(ChannelId c) const { return budgets[static_cast<std::size_t>(c)]; }
  int max_budget() const;
  void validate() const;
};

inline double routing_score(double calibrated, double uniqueness, double eta) {
  return calibrated + eta * uniqueness;
}

struct RoutedTrigger {
  ItemId item = 0;
  double score = 0.0;
  friend bool operator==(const RoutedTrigger&, const RoutedTrigger&) = default;
};

struct RoutingAssignment {
  std::vector<ChannelId> roster;
  std::vector<std::vector<RoutedTrigger>> selected;  // per roster channel, descending score

  std::vector<ItemId> triggers(std::size_t k) const;
  friend bool operator==(const RoutingAssignment&, const RoutingAssignment&) = default;
};

// Per-channel top-B_c over `scores` (triggers x roster, trigger-major). Ties
// go to the lower item id.
RoutingAssignment route(std::span<const ItemId> triggers, std::span<const double> scores,
                        const std::vector<ChannelId>& roster, const RoutingConfig& cfg);

// Routing scores v^ + eta * rho^ for every (trigger, channel).
std::vector<double> routing_scores(std::span<const TriggerPrediction> predictions, double eta);

RoutingAssignment route_predictions(std::span<const TriggerPrediction> predictions,
                                    const std::vector<ChannelId>& roster, const RoutingConfig& cfg);

// ---- rule-based baselines ----------------------------------------------
//
// Each baseline reads history[0, prefix_len) and returns one ordered list
// that every channel shares.

std::vector<ItemId> baseline_recent(const UserHistory& h, std::size_t prefix_len, int n,
                                    double threshold = kDefaultEffectiveViewSeconds);

std::vector<ItemId> baseline_tagtop(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog,
                                    int n, double threshold = kDefaultEffectiveViewSeconds);

std::vector<ItemId> baseline_ltv(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog, int n,
                                 double threshold = kDefaultEffectiveViewSeconds);

std::vector<ItemId> baseline_nic(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog, int n,
                                 double rise_factor = 1.5, double recent_fraction = 0.25,
                                 double threshold = kDefaultEffectiveViewSeconds);

// Shares `list` with every channel, truncated to each budget.
RoutingAssignment shared_assignment(std::span<const ItemId> list, const std::vector<ChannelId>& roster,
                                    const RoutingConfig& cfg);

}  // namespace capts
