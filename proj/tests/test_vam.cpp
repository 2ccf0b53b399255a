#include <doctest.h>

#include <random>

#include "capts/vam.hpp"
#include "support.hpp"

using namespace capts;

namespace {

AggregatedWindow window_of(std::initializer_list<std::pair<ItemId, double>> entries) {
  std::vector<WindowEntry> w;
  EpochSeconds t = 1;
  for (const auto& [item, watch] : entries) w.push_back({item, t++, watch});
  return aggregate_window(w);
}

}  // namespace

TEST_CASE("raw reward hand sums") {
  const auto w = window_of({{1, 30}, {2, 40}});
  CHECK(raw_reward(std::vector<ItemId>{}, w) == 0.0);
  CHECK(raw_reward(std::vector<ItemId>{7, 8}, w) == 0.0);
  CHECK(raw_reward(std::vector<ItemId>{1}, w) == 30.0);
  CHECK(raw_reward(std::vector<ItemId>{1, 2}, w) == 70.0);
  CHECK(raw_reward(std::vector<ItemId>{1, 1, 2}, w) == 70.0);
}

TEST_CASE("repeated window views aggregate before intersecting") {
  const auto w = window_of({{1, 30}, {1, 12}, {2, 40}});
  CHECK(raw_reward(std::vector<ItemId>{1}, w) == 42.0);
}

TEST_CASE("intensity and binary label") {
  CHECK(intensity_label(250, 100, 6) == 2.5);
  CHECK(intensity_label(10000, 100, 6) == 6.0);
  CHECK(intensity_label(0, 100, 6) == 0.0);
  CHECK(binary_label(2.5, 2.5) == 1);
  CHECK(binary_label(0.0, 0.5) == 0);
  CHECK(binary_label(0.0, 0.0) == 1);
}

TEST_CASE("intensity grid over r in [0, 2000]") {
  for (int i = 0; i <= 20000; ++i) {
    const double r = i * 0.1;
    const double l = intensity_label(r, 100, 6);
    CHECK(l == std::min(6.0, std::max(0.0, r / 100.0)));
  }
}

TEST_CASE("uniqueness examples") {
  std::vector<std::vector<ItemId>> disjoint(3);
  for (ItemId i = 0; i < 150; ++i) disjoint[i / 50].push_back(i);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto u = uniqueness(disjoint, c, 1e-6, 0.8);
    CHECK(u.ratio == doctest::Approx(50.0 / (50.0 + 1e-6)));
    CHECK(u.ratio < 1.0);
    CHECK(u.label == 1);
  }
  const std::vector<std::vector<ItemId>> same = {{1, 2, 3}, {1, 2, 3}, {7, 8}};
  CHECK(uniqueness(same, 0, 1e-6, 0.8).ratio == 0.0);
  CHECK(uniqueness(same, 1, 1e-6, 0.8).ratio == 0.0);
  CHECK(uniqueness(same, 2, 1e-6, 0.8).ratio == doctest::Approx(1.0));

  const std::vector<std::vector<ItemId>> toy = {{1, 2, 3, 4}, {1}, {}};
  const auto u = uniqueness(toy, 0, 1e-6, 0.8);
  CHECK(u.ratio == doctest::Approx(3.0 / (4.0 + 1e-6)));
  CHECK(u.label == 0);
  CHECK(uniqueness(toy, 2, 1e-6, 0.8).ratio == 0.0);
}

TEST_CASE("unique subsets never outnumber the union") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<ItemId>> sets(3);
    for (auto& s : sets) {
      const int n = static_cast<int>(rng() % 12);
      for (int i = 0; i < n; ++i) s.push_back(static_cast<ItemId>(rng() % 15));
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    std::set<ItemId> uni;
    double unique_total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      uni.insert(sets[c].begin(), sets[c].end());
      const auto u = uniqueness(sets, c, 1e-6, 0.8);
      CHECK(u.ratio >= 0.0);
      CHECK(u.ratio < 1.0);
      unique_total += std::round(u.ratio * (static_cast<double>(sets[c].size()) + 1e-6));
    }
    CHECK(unique_total <= static_cast<double>(uni.size()));
  }
}

TEST_CASE("reward is monotone in the retrieved set and in watch time") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<WindowEntry> w;
    for (int i = 0; i < 8; ++i) w.push_back({static_cast<ItemId>(rng() % 10), i, 7.0 + static_cast<double>(rng() % 100)});
    std::vector<ItemId> retrieved;
    for (int i = 0; i < 4; ++i) retrieved.push_back(static_cast<ItemId>(rng() % 10));
    const double base = raw_reward(retrieved, aggregate_window(w));
    auto more = retrieved;
    more.push_back(static_cast<ItemId>(rng() % 10));
    CHECK(raw_reward(more, aggregate_window(w)) >= base);
    auto longer = w;
    longer[rng() % longer.size()].watch_seconds += 25.0;
    CHECK(intensity_label(raw_reward(retrieved, aggregate_window(longer)), 100, 6) >=
          intensity_label(base, 100, 6));
  }
}

TEST_CASE("build_supervision equals the nested-loop oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = capts::testing::random_vam_instance(rng);
    const auto store = capts::testing::store_of(inst);
    const std::vector<RequestInstance> reqs = {inst.request};
    const auto set = build_supervision(reqs, store, inst.cfg, inst.roster, 1200);
    const auto oracle = capts::testing::vam_oracle(inst);
    REQUIRE(set.records.size() == oracle.size());
    CHECK(set.records == oracle);
  }
}

TEST_CASE("one request, two triggers, three channels gives six records") {
  std::mt19937_64 rng(1);
  auto inst = capts::testing::random_vam_instance(rng);
  while (inst.roster.size() != 3 || inst.request.eligible_triggers.size() < 2)
    inst = capts::testing::random_vam_instance(rng);
  inst.request.eligible_triggers.resize(2);
  const std::vector<RequestInstance> reqs = {inst.request};
  const auto set = build_supervision(reqs, capts::testing::store_of(inst), inst.cfg, inst.roster, 1200);
  CHECK(set.records.size() == 6);
  CHECK(set.skipped == 0);
}

TEST_CASE("instances without a snapshot are skipped and counted") {
  std::mt19937_64 rng(3);
  auto inst = capts::testing::random_vam_instance(rng);
  auto early = inst.request;
  early.tau0 = inst.snapshots.front()->as_of;  // tau0 - delta precedes every snapshot
  early.request_id += 1;
  const std::vector<RequestInstance> reqs = {inst.request, early};
  const auto set = build_supervision(reqs, capts::testing::store_of(inst), inst.cfg, inst.roster, 1200);
  CHECK(set.skipped == 1);
  CHECK(set.requests.size() == 1);
}

TEST_CASE("empty neighbor lists give all-zero records") {
  std::mt19937_64 rng(5);
  auto inst = capts::testing::random_vam_instance(rng);
  for (auto& s : inst.snapshots) {
    auto copy = std::make_shared<IndexSnapshot>(*s);
    for (auto& l : copy->neighbors) l.clear();
    s = copy;
  }
  for (auto& p : inst.cfg.channels) p.gamma = std::max(p.gamma, 0.25);
  const std::vector<RequestInstance> reqs = {inst.request};
  const auto set = build_supervision(reqs, capts::testing::store_of(inst), inst.cfg, inst.roster, 1200);
  for (const auto& r : set.records) {
    CHECK(r.raw_reward == 0.0);
    CHECK(r.intensity == 0.0);
    CHECK(r.value_label == 0);
    CHECK(r.uniqueness_ratio == 0.0);
    CHECK(r.uniqueness_label == 0);
  }
}

TEST_CASE("gamma calibration hits the target rate and keeps gamma within the cap") {
  std::mt19937_64 rng(6);
  std::vector<SupervisionRecord> recs;
  for (int i = 0; i < 3000; ++i) {
    SupervisionRecord r;
    r.request_id = static_cast<RequestId>(i / 3);
    r.trigger = static_cast<ItemId>(i);
    r.channel = kAllChannels[static_cast<std::size_t>(i % 3)];
    r.raw_reward = static_cast<double>(rng() % 600);
    r.intensity = intensity_label(r.raw_reward, 100, 6);
    recs.push_back(r);
  }
  VamConfig cfg;
  calibrate_thresholds(recs, cfg);
  const auto rates = positive_rates(recs);
  for (ChannelId c : kAllChannels) {
    const auto& p = cfg.params(c);
    CHECK(p.gamma >= 0.0);
    CHECK(p.gamma <= p.cap);
    CHECK(rates[static_cast<std::size_t>(c)] == doctest::Approx(cfg.target_positive_rate).epsilon(0.02 / 0.1));
  }
  for (const auto& r : recs) CHECK(r.value_label == binary_label(r.intensity, cfg.params(r.channel).gamma));
}

TEST_CASE("supervision file round-trip") {
  std::mt19937_64 rng(7);
  auto inst = capts::testing::random_vam_instance(rng);
  while (inst.request.eligible_triggers.empty()) inst = capts::testing::random_vam_instance(rng);
  const std::vector<RequestInstance> reqs = {inst.request};
  const auto set = build_supervision(reqs, capts::testing::store_of(inst), inst.cfg, inst.roster, 1200);
  capts::testing::TempDir dir;
  write_supervision(set, inst.cfg, dir.path() / "s.tsv", dir.path() / "r.tsv");
  const auto back = read_supervision(dir.path() / "s.tsv", dir.path() / "r.tsv");
  CHECK(back.records == set.records);
  REQUIRE(back.requests.size() == 1);
  CHECK(back.requests[0].request_id == inst.request.request_id);
  CHECK(back.config.theta == inst.cfg.theta);
  for (ChannelId c : kAllChannels) CHECK(back.config.params(c).gamma == inst.cfg.params(c).gamma);
}
