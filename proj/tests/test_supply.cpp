#include <doctest.h>

#include <random>
#include <thread>

#include "capts/supply.hpp"
#include "capts/text_io.hpp"
#include "support.hpp"

using namespace capts;

namespace {

CacheEntry entry(UserId user, EpochSeconds at, EpochSeconds ttl, std::string ckpt,
                 std::vector<ScoredTrigger> triggers = {}) {
  CacheEntry e;
  e.user = user;
  e.refreshed_at = at;
  e.ttl_seconds = ttl;
  e.checkpoint = std::move(ckpt);
  e.triggers = std::move(triggers);
  return e;
}

}  // namespace

TEST_CASE("merge keeps the larger score per channel and the union of items") {
  const std::vector<ScoredTrigger> online = {{1, {0.5, 0.2}}, {2, {0.1, 0.1}}};
  const std::vector<ScoredTrigger> cached = {{2, {0.3, 0.05}}, {3, {0.4, 0.9}}};
  const auto m = merge_supply(online, cached);
  REQUIRE(m.size() == 3);
  CHECK(m[0] == ScoredTrigger{3, {0.4, 0.9}});
  CHECK(m[1] == ScoredTrigger{1, {0.5, 0.2}});
  CHECK(m[2] == ScoredTrigger{2, {0.3, 0.1}});
  CHECK(merge_supply(online, {}).size() == 2);
  const std::vector<ScoredTrigger> bad = {{1, {0.5}}};
  CHECK_THROWS_AS(merge_supply(online, bad), ConfigError);
}

TEST_CASE("merge is commutative in content") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredTrigger> a, b;
    for (int i = 0; i < 6; ++i) {
      a.push_back({static_cast<ItemId>(rng() % 10), {static_cast<double>(rng() % 8), static_cast<double>(rng() % 8)}});
      b.push_back({static_cast<ItemId>(rng() % 10), {static_cast<double>(rng() % 8), static_cast<double>(rng() % 8)}});
    }
    auto dedup = [](std::vector<ScoredTrigger> v) { return merge_supply(std::move(v), {}); };
    a = dedup(a);
    b = dedup(b);
    CHECK(merge_supply(a, b) == merge_supply(b, a));
  }
}

TEST_CASE("cache entries expire after the TTL unless marked no-expiry") {
  TriggerCache cache;
  cache.put(entry(1, 1000, 60, "abc"));
  cache.put(entry(2, 1000, kNoExpiry, "abc"));
  CHECK(cache.get(1, 1060, "abc") != nullptr);
  CHECK(cache.get(1, 1061, "abc") == nullptr);
  CHECK(cache.get(2, 1000 + 365 * 86400, "abc") != nullptr);
  CHECK(cache.get(1, 1000, "other") == nullptr);
  CHECK(cache.get(3, 1000, "abc") == nullptr);
  CHECK(cache.hits() == 2);
  CHECK(cache.misses() == 3);
  cache.put(entry(1, 5000, 60, "abc"));
  CHECK(cache.get(1, 5010, "abc") != nullptr);
  CHECK(cache.size() == 2);
}

TEST_CASE("cache save and load round-trip") {
  TriggerCache cache;
  cache.put(entry(4, 10, kNoExpiry, "ck1", {{3, {0.1, 1.0 / 3.0, 0.7}}, {9, {0.25, 0.5, 1e-17}}}));
  cache.put(entry(7, 20, 3600, "", {}));
  capts::testing::TempDir dir;
  cache.save(dir.path() / "cache.txt");
  TriggerCache back;
  back.put(entry(99, 0, 1, "x"));
  back.load(dir.path() / "cache.txt");
  CHECK(back.size() == 2);
  const auto a = back.get(4, 1 << 30, "ck1");
  REQUIRE(a);
  CHECK(*a == *cache.get(4, 1 << 30, "ck1"));
  const auto b = back.get(7, 20, "");
  REQUIRE(b);
  CHECK(b->triggers.empty());
  CHECK(back.get(99, 0, "x") == nullptr);

  {
    TextWriter w(dir.path() / "bad.txt");
    w.line(kCacheHeader);
    w.line("1 2 3 ck 2 5:0.1");
    w.close();
  }
  CHECK_THROWS_AS(back.load(dir.path() / "bad.txt"), IoError);
  CHECK_THROWS_AS(back.load(dir.path() / "missing.txt"), IoError);
}

TEST_CASE("concurrent readers and writers see whole entries") {
  TriggerCache cache;
  for (UserId u = 0; u < 8; ++u) cache.put(entry(u, 0, kNoExpiry, "c", {{u, {0.0}}}));
  std::atomic<bool> torn{false};
  std::vector<std::thread> threads;
  for (int w = 0; w < 2; ++w)
    threads.emplace_back([&, w] {
      for (int i = 0; i < 2000; ++i) {
        const UserId u = static_cast<UserId>((i + w) % 8);
        std::vector<ScoredTrigger> ts(static_cast<std::size_t>(i % 5 + 1), ScoredTrigger{u, {static_cast<double>(i)}});
        cache.put(entry(u, i, kNoExpiry, "c", std::move(ts)));
      }
    });
  for (int r = 0; r < 3; ++r)
    threads.emplace_back([&] {
      for (int i = 0; i < 4000; ++i) {
        const auto e = cache.get(static_cast<UserId>(i % 8), 0, "c");
        if (!e) continue;
        for (const auto& t : e->triggers)
          if (t.item != e->user || t.scores != e->triggers.front().scores) torn = true;
      }
    });
  for (auto& t : threads) t.join();
  CHECK_FALSE(torn.load());
  CHECK(cache.size() == 8);
}

TEST_CASE("nearline refresh and online supply") {
  std::mt19937_64 rng(21);
  auto mc = capts::testing::random_model_case(rng, 6, 3, 1);
  const std::string ck = checkpoint_hash(mc.model);
  std::vector<std::pair<ItemId, double>> views;
  for (int i = 0; i < 40; ++i) views.push_back({static_cast<ItemId>(rng() % 12), 5.0 + static_cast<double>(rng() % 60)});
  const auto h = capts::testing::make_history(2, views, 10000, 60);

  SupplyConfig cfg;
  cfg.long_history = 100;
  cfg.recent_n = 2;
  cfg.top_m = 5;
  const EpochSeconds now = h.events.back().ts + 1;
  const auto e = nearline_refresh(mc.model, ck, h, h.events.size(), now, cfg, 0.2);
  CHECK(e.triggers.size() == 5);
  for (std::size_t i = 1; i < e.triggers.size(); ++i) CHECK(e.triggers[i - 1].max_score() >= e.triggers[i].max_score());

  const auto all = score_candidates(mc.model, h, h.events.size(), now, 100, 0.2);
  double fifth = 0.0;
  {
    std::vector<double> m;
    for (const auto& t : all) m.push_back(t.max_score());
    std::sort(m.rbegin(), m.rend());
    fifth = m[4];
  }
  CHECK(e.triggers.back().max_score() == fifth);

  TriggerCache cache;
  const auto cold = online_supply(mc.model, ck, h, h.events.size(), now, cache, cfg, 0.2);
  CHECK_FALSE(cold.cache_hit);
  CHECK(cold.triggers.size() == 2);

  cache.put(e);
  const auto warm = online_supply(mc.model, ck, h, h.events.size(), now + 10, cache, cfg, 0.2);
  CHECK(warm.cache_hit);
  CHECK(warm.triggers.size() >= 5);
  CHECK(warm.triggers.front().max_score() >= e.triggers.front().max_score());

  const auto stale = online_supply(mc.model, "different", h, h.events.size(), now + 10, cache, cfg, 0.2);
  CHECK_FALSE(stale.cache_hit);

  RoutingConfig rc;
  rc.budgets = {1, 2, 3};
  const auto a = route_supply(warm.triggers, mc.model.config().roster, rc);
  CHECK(a.selected[0].size() == 1);
  CHECK(a.selected[2].size() == 3);
}

TEST_CASE("supply config validation") {
  SupplyConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.top_m = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SupplyConfig{};
  cfg.ttl_seconds = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
