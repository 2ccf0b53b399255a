#include <doctest.h>

#include <random>
#include <set>

#include "capts/routing.hpp"
#include "support.hpp"

using namespace capts;
using capts::testing::make_catalog;
using capts::testing::make_history;

namespace {

const std::vector<ChannelId> kRoster(kAllChannels.begin(), kAllChannels.end());

RoutingConfig budgets(int a, int b, int c) {
  RoutingConfig cfg;
  cfg.budgets = {a, b, c};
  return cfg;
}

}  // namespace

TEST_CASE("route picks the per-channel top B_c with ties to the lower id") {
  const std::vector<ItemId> triggers = {40, 10, 30, 20};
  // trigger-major: (co, emb, content)
  const std::vector<double> scores = {0.9, 0.1, 0.5,  //
                                      0.2, 0.8, 0.5,  //
                                      0.9, 0.3, 0.1,  //
                                      0.4, 0.8, 0.5};
  const auto a = route(triggers, scores, kRoster, budgets(2, 1, 2));
  CHECK(a.triggers(0) == std::vector<ItemId>{30, 40});
  CHECK(a.triggers(1) == std::vector<ItemId>{10});
  CHECK(a.triggers(2) == std::vector<ItemId>{10, 20});
  CHECK(a.selected[0][0].score == 0.9);

  const auto none = route(triggers, scores, kRoster, budgets(0, 0, 9));
  CHECK(none.selected[0].empty());
  CHECK(none.selected[2].size() == 4);
  CHECK_THROWS_AS(route(triggers, std::vector<double>(5, 0.0), kRoster, budgets(1, 1, 1)), ConfigError);
}

TEST_CASE("routing matches brute force on random instances") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<ItemId> triggers(n);
    for (std::size_t i = 0; i < n; ++i) triggers[i] = static_cast<ItemId>(i * 3 + rng() % 3);
    std::vector<double> scores(n * 3);
    for (auto& s : scores) s = static_cast<double>(rng() % 9) / 8.0;  // frequent ties
    const auto cfg = budgets(static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4));
    const auto a = route(triggers, scores, kRoster, cfg);
    CHECK(capts::testing::routing_objective(a) ==
          capts::testing::brute_force_routing_objective(n, scores, kRoster, cfg));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(a.selected[k].size() == std::min<std::size_t>(n, static_cast<std::size_t>(cfg.budgets[k])));
      std::set<ItemId> uniq;
      for (const auto& r : a.selected[k]) uniq.insert(r.item);
      CHECK(uniq.size() == a.selected[k].size());
    }
  }
}

TEST_CASE("routing scores combine calibrated value and uniqueness") {
  std::vector<TriggerPrediction> preds(2);
  preds[0] = {5, {{0.2, 0.3, 0.5}, {0.2, 0.6, 0.0}}};
  preds[1] = {6, {{0.2, 0.35, 0.0}, {0.2, 0.5, 1.0}}};
  const auto s = routing_scores(preds, 0.2);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == doctest::Approx(0.4));
  CHECK(s[3] == doctest::Approx(0.7));
  RoutingConfig cfg = budgets(1, 1, 1);
  cfg.eta = 0.2;
  const auto a = route_predictions(preds, {ChannelId::cooccurrence, ChannelId::embedding}, cfg);
  CHECK(a.triggers(0) == std::vector<ItemId>{5});
  CHECK(a.triggers(1) == std::vector<ItemId>{6});
  cfg.eta = 0.0;
  CHECK(route_predictions(preds, {ChannelId::cooccurrence, ChannelId::embedding}, cfg).triggers(1) ==
        std::vector<ItemId>{5});
}

TEST_CASE("Recent baseline: distinct effective views, newest first") {
  const auto h = make_history(1, {{1, 20}, {2, 3}, {3, 30}, {1, 40}, {4, 10}}, 0, 10);
  CHECK(baseline_recent(h, 5, 10) == std::vector<ItemId>{4, 1, 3});
  CHECK(baseline_recent(h, 5, 2) == std::vector<ItemId>{4, 1});
  CHECK(baseline_recent(h, 3, 10) == std::vector<ItemId>{3, 1});
  CHECK(baseline_recent(h, 0, 10).empty());
}

TEST_CASE("TagTop baseline: tags by exposure, best watch per tag, distinct authors") {
  const auto cat = make_catalog(10, 3, 1);  // tag = i % 5, author = i % 7
  const auto h = make_history(1, {{0, 20}, {5, 40}, {1, 10}, {6, 3}, {2, 30}, {0, 25}}, 0, 10);
  CHECK(baseline_tagtop(h, 6, cat, 10) == std::vector<ItemId>{5, 1, 2, 0});
  CHECK(baseline_tagtop(h, 6, cat, 2) == std::vector<ItemId>{5, 1});

  // Items 0 and 35 share tag 0 and author 0; only the longer watch survives.
  const auto wide = make_catalog(40, 3, 1);
  const auto h2 = make_history(2, {{0, 20}, {35, 40}, {5, 30}}, 0, 10);
  CHECK(baseline_tagtop(h2, 3, wide, 10) == std::vector<ItemId>{35, 5});
}

TEST_CASE("LTV baseline counts later views sharing author or tag") {
  const auto cat = make_catalog(10, 3, 1);
  const auto h = make_history(1, {{0, 20}, {7, 20}, {3, 20}}, 0, 10);
  CHECK(baseline_ltv(h, 3, cat, 10) == std::vector<ItemId>{0, 3, 7});
  CHECK(baseline_ltv(h, 3, cat, 1) == std::vector<ItemId>{0});
}

TEST_CASE("NIC baseline prefers rising tags and falls back to Recent") {
  const auto cat = make_catalog(10, 3, 1);
  const auto rising = make_history(1, {{0, 20}, {5, 20}, {0, 20}, {5, 20}, {0, 20}, {5, 20}, {1, 20}, {6, 20}}, 0, 10);
  CHECK(baseline_nic(rising, 8, cat, 10) == std::vector<ItemId>{6, 1});
  const auto flat = make_history(1, {{0, 20}, {5, 20}, {0, 20}, {5, 20}}, 0, 10);
  CHECK(baseline_nic(flat, 4, cat, 10) == baseline_recent(flat, 4, 10));
}

TEST_CASE("baselines only return effective views from the prefix, without duplicates") {
  std::mt19937_64 rng(13);
  const auto cat = make_catalog(40, 3, 2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<ItemId, double>> views;
    for (int i = 0; i < 60; ++i) views.push_back({static_cast<ItemId>(rng() % 40), static_cast<double>(rng() % 30)});
    const auto h = make_history(1, views, 0, 5);
    const std::size_t prefix = 10 + rng() % 50;
    std::set<ItemId> allowed;
    for (std::size_t i = 0; i < prefix; ++i)
      if (is_effective_view(h.events[i])) allowed.insert(h.events[i].item);
    for (const auto& list : {baseline_recent(h, prefix, 12), baseline_tagtop(h, prefix, cat, 12),
                             baseline_ltv(h, prefix, cat, 12), baseline_nic(h, prefix, cat, 12)}) {
      CHECK(list.size() <= 12);
      std::set<ItemId> uniq(list.begin(), list.end());
      CHECK(uniq.size() == list.size());
      for (ItemId i : list) CHECK(allowed.count(i) == 1);
    }
  }
}

TEST_CASE("shared assignment truncates one list per channel budget") {
  const std::vector<ItemId> list = {9, 8, 7};
  const auto a = shared_assignment(list, kRoster, budgets(2, 0, 5));
  CHECK(a.triggers(0) == std::vector<ItemId>{9, 8});
  CHECK(a.triggers(1).empty());
  CHECK(a.triggers(2) == list);
}

TEST_CASE("routing config validation") {
  RoutingConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.eta = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RoutingConfig{};
  cfg.budgets[1] = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RoutingConfig{};
  cfg.nic_recent_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
