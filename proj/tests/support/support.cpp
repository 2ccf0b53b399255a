#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>

#include <unistd.h>

#include <fmt/format.h>

namespace capts::testing {

namespace {

// Multiples of 1/4 are exact in binary, so sums do not depend on order.
double dyadic(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo * 4, hi * 4)(rng) / 4.0;
}

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

VamInstance random_vam_instance(std::mt19937_64& rng, int max_triggers, int max_retrieved, int max_window) {
  VamInstance inst;
  const int n_channels = uniform(rng, 1, 3);
  inst.roster.assign(kAllChannels.begin(), kAllChannels.begin() + n_channels);
  const int n_items = 16;

  for (auto& p : inst.cfg.channels) {
    p.scale = std::ldexp(1.0, uniform(rng, 0, 7));  // 1 .. 128
    p.cap = uniform(rng, 1, 8);
    p.gamma = uniform(rng, 0, static_cast<int>(p.cap) * 4) / 4.0;
  }
  inst.cfg.theta = std::vector<double>{0.25, 0.5, 0.8}[static_cast<std::size_t>(uniform(rng, 0, 2))];
  inst.cfg.max_candidates = 50;

  auto& r = inst.request;
  r.request_id = static_cast<RequestId>(uniform(rng, 1, 1000));
  r.user = 1;
  r.tau0 = 100'000;
  std::vector<ItemId> pool(n_items);
  for (int i = 0; i < n_items; ++i) pool[static_cast<std::size_t>(i)] = static_cast<ItemId>(i);
  std::shuffle(pool.begin(), pool.end(), rng);
  const int n_triggers = uniform(rng, 0, max_triggers);
  r.eligible_triggers.assign(pool.begin(), pool.begin() + n_triggers);

  const int n_window = uniform(rng, 0, max_window);
  for (int i = 0; i < n_window; ++i)
    r.future_window.push_back({static_cast<ItemId>(uniform(rng, 0, n_items - 1)), r.tau0 + 10 * (i + 1),
                               dyadic(rng, 7, 200)});

  for (ChannelId c : inst.roster) {
    auto s = std::make_shared<IndexSnapshot>();
    s->channel = c;
    s->as_of = r.tau0 - 5000;
    s->k_ret = max_retrieved;
    s->neighbors.assign(n_items, {});
    for (int t = 0; t < n_items; ++t) {
      std::vector<ItemId> cands = pool;
      std::shuffle(cands.begin(), cands.end(), rng);
      const int k = uniform(rng, 0, max_retrieved);
      for (int j = 0; j < k; ++j) s->neighbors[static_cast<std::size_t>(t)].push_back({cands[static_cast<std::size_t>(j)], 1.0f / static_cast<float>(j + 1)});
    }
    inst.snapshots.push_back(std::move(s));
  }
  return inst;
}

SnapshotStore store_of(const VamInstance& inst) {
  SnapshotStore store;
  for (const auto& s : inst.snapshots) store.add(s);
  return store;
}

std::vector<SupervisionRecord> vam_oracle(const VamInstance& inst) {
  std::vector<SupervisionRecord> out;
  const auto& req = inst.request;
  const std::size_t R = inst.roster.size();
  for (ItemId t : req.eligible_triggers) {
    // Retrieved item sets per channel.
    std::vector<std::vector<ItemId>> sets(R);
    for (std::size_t c = 0; c < R; ++c) {
      for (const auto& nb : inst.snapshots[c]->neighbors[t]) {
        bool dup = false;
        for (ItemId x : sets[c]) dup = dup || x == nb.item;
        if (!dup) sets[c].push_back(nb.item);
      }
    }
    for (std::size_t c = 0; c < R; ++c) {
      const auto& p = inst.cfg.params(inst.roster[c]);
      // r_c: each window item contributes its total window watch time once.
      double reward = 0.0;
      std::vector<ItemId> seen;
      for (const auto& w : req.future_window) {
        bool done = false;
        for (ItemId x : seen) done = done || x == w.item;
        if (done) continue;
        seen.push_back(w.item);
        bool retrieved = false;
        for (ItemId x : sets[c]) retrieved = retrieved || x == w.item;
        if (!retrieved) continue;
        for (const auto& w2 : req.future_window)
          if (w2.item == w.item) reward += w2.watch_seconds;
      }
      double intensity = reward / p.scale;
      if (intensity < 0.0) intensity = 0.0;
      if (intensity > p.cap) intensity = p.cap;

      std::size_t unique = 0;
      for (ItemId x : sets[c]) {
        bool elsewhere = false;
        for (std::size_t o = 0; o < R; ++o) {
          if (o == c) continue;
          for (ItemId y : sets[o]) elsewhere = elsewhere || x == y;
        }
        if (!elsewhere) ++unique;
      }
      const double ratio = static_cast<double>(unique) / (static_cast<double>(sets[c].size()) + inst.cfg.epsilon);

      SupervisionRecord rec;
      rec.request_id = req.request_id;
      rec.trigger = t;
      rec.channel = inst.roster[c];
      rec.raw_reward = reward;
      rec.intensity = intensity;
      rec.value_label = intensity >= p.gamma ? 1 : 0;
      rec.uniqueness_ratio = ratio;
      rec.uniqueness_label = ratio > inst.cfg.theta ? 1 : 0;
      out.push_back(rec);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.trigger != b.trigger) return a.trigger < b.trigger;
    return a.channel < b.channel;
  });
  return out;
}

double brute_force_routing_objective(std::size_t n, std::span<const double> scores,
                                     const std::vector<ChannelId>& roster, const RoutingConfig& cfg) {
  const std::size_t R = roster.size();
  double total = 0.0;
  for (std::size_t k = 0; k < R; ++k) {
    double best = 0.0;
    const auto budget = static_cast<std::size_t>(cfg.budget(roster[k]));
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) > budget) continue;
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t)
        if (mask & (1u << t)) s += scores[t * R + k];
      best = std::max(best, s);
    }
    total += best;
  }
  return total;
}

double routing_objective(const RoutingAssignment& a) {
  double total = 0.0;
  for (const auto& sel : a.selected) {
    double s = 0.0;
    for (const auto& t : sel) s += t.score;
    total += s;
  }
  return total;
}

namespace {

SequenceStep random_step(std::mt19937_64& rng, int n_items) {
  return {static_cast<ItemId>(uniform(rng, 0, n_items)), uniform(rng, 0, 7), uniform(rng, 0, 5)};
}

}  // namespace

ModelCase random_model_case(std::mt19937_64& rng, int dim, int channels, int requests, int triggers_per_request,
                            bool use_calibrator) {
  ModelConfig mc;
  mc.d = dim;
  mc.d_a = dim;
  mc.d_h = dim;
  mc.seq_len = 6;
  mc.n_items = 12;
  mc.n_users = 4;
  mc.use_calibrator = use_calibrator;
  mc.roster.assign(kAllChannels.begin(), kAllChannels.begin() + channels);
  ModelCase mcase{CatrModel(mc, rng()), {}};

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < requests; ++r) {
    TrainingRequest tr;
    tr.request_id = static_cast<RequestId>(r + 1);
    tr.features.user = static_cast<UserId>(uniform(rng, 0, mc.n_users));
    tr.features.tod_bucket = uniform(rng, 0, 3);
    const int len = uniform(rng, r == 0 ? 0 : 1, mc.seq_len);
    for (int i = 0; i < len; ++i) tr.features.sequence.push_back(random_step(rng, mc.n_items));
    for (int t = 0; t < triggers_per_request; ++t) {
      tr.features.triggers.push_back(random_step(rng, mc.n_items));
      for (int c = 0; c < channels; ++c) {
        ChannelTarget tg;
        tg.cap = 6.0;
        tg.intensity = 6.0 * unit(rng);
        tg.value_label = tg.intensity >= 3.0 ? 1.0 : 0.0;
        tg.uniqueness_label = unit(rng) < 0.5 ? 1.0 : 0.0;
        tr.targets.push_back(tg);
      }
    }
    mcase.batch.push_back(std::move(tr));
  }
  return mcase;
}

std::vector<TrainingRequest> separable_requests(std::mt19937_64& rng, int n, const std::vector<ChannelId>& roster) {
  std::vector<TrainingRequest> out;
  for (int r = 0; r < n; ++r) {
    TrainingRequest tr;
    tr.request_id = static_cast<RequestId>(r + 1);
    tr.features.user = static_cast<UserId>(uniform(rng, 0, 9));
    for (int i = 0; i < 5; ++i) tr.features.sequence.push_back(random_step(rng, 30));
    for (int t = 0; t < 4; ++t) {
      auto step = random_step(rng, 30);
      tr.features.triggers.push_back(step);
      const bool pos = step.watch_bucket >= 3;
      for (std::size_t c = 0; c < roster.size(); ++c) {
        ChannelTarget tg;
        tg.cap = 6.0;
        tg.intensity = pos ? 5.0 : 0.5;
        tg.value_label = pos ? 1.0 : 0.0;
        tg.uniqueness_label = pos ? 0.0 : 1.0;
        tr.targets.push_back(tg);
      }
    }
    out.push_back(std::move(tr));
  }
  return out;
}

UserHistory make_history(UserId user, const std::vector<std::pair<ItemId, double>>& views, EpochSeconds t0,
                         EpochSeconds step) {
  UserHistory h{user, {}};
  EpochSeconds t = t0;
  for (const auto& [item, watch] : views) {
    h.events.push_back({user, item, t, watch, 0});
    t += step;
  }
  return h;
}

Catalog make_catalog(int n_items, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Catalog cat;
  cat.content_dim = dim;
  for (int i = 0; i < n_items; ++i) {
    Item it;
    it.id = static_cast<ItemId>(i);
    it.author_id = static_cast<std::uint32_t>(i % 7);
    it.tag_id = static_cast<std::uint32_t>(i % 5);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (auto& x : v) {
      x = nd(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double x : v) it.content.push_back(static_cast<float>(x / norm));
    it.duration_seconds = 60.0;
    cat.items.push_back(std::move(it));
  }
  return cat;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          fmt::format("capts-test-{}-{}-{}", ::getpid(), counter++, rd());
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace capts::testing
