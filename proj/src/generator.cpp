#include "capts/generator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace capts {

void GeneratorConfig::validate() const {
  if (users <= 0 || items <= 0) throw ConfigError("generator needs at least one user and one item");
  if (topics <= 0 || topics > items) throw ConfigError("topics must be in [1, items]");
  if (content_dim < 2) throw ConfigError("content_dim must be >= 2");
  if (days <= 0) throw ConfigError("days must be positive");
  if (min_interactions <= 0 || mean_extra_interactions < 0 || session_length <= 0)
    throw ConfigError("bad session configuration");
  if (interests_per_user <= 0 || interests_per_user > topics)
    throw ConfigError("interests_per_user must be in [1, topics]");
  if (bundle_size < 2 || chain_length < 2 || family_size < 2)
    throw ConfigError("bundle, chain and family sizes must be >= 2");
  double mix = 0.0;
  for (double m : channel_mix) {
    if (m < 0.0) throw ConfigError("channel_mix entries must be nonnegative");
    mix += m;
  }
  if (mix <= 0.0) throw ConfigError("channel_mix must have a positive entry");
  if (seed_rate < 0.0 || explore_rate < 0.0 || seed_rate + explore_rate >= 1.0)
    throw ConfigError("seed_rate + explore_rate must be < 1");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

template <typename T>
std::size_t pick_weighted(Rng& rng, const std::vector<T>& w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double x = uniform(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    x -= w[i];
    if (x < 0.0) return i;
  }
  return w.size() - 1;
}

std::vector<float> random_unit(Rng& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / s);
  return out;
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
}

struct Anchor {
  ItemId item;
  double watch;
};

}  // namespace

GeneratedCorpus generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  GeneratedCorpus out;
  auto& catalog = out.corpus.catalog;
  auto& planted = out.planted;
  const auto n_items = static_cast<std::size_t>(cfg.items);
  const auto n_topics = static_cast<std::size_t>(cfg.topics);
  const EpochSeconds span = static_cast<EpochSeconds>(cfg.days) * 86400;

  // ---- items and their latent partitions --------------------------------
  std::vector<ItemId> perm(n_items);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  planted.topic_of.assign(n_items, 0);
  std::vector<std::vector<ItemId>> topic_items(n_topics);
  for (std::size_t k = 0; k < n_items; ++k) {
    const auto t = static_cast<std::uint32_t>(k % n_topics);
    planted.topic_of[perm[k]] = t;
  }
  for (ItemId i = 0; i < n_items; ++i) topic_items[planted.topic_of[i]].push_back(i);

  planted.bundle_of.assign(n_items, 0);
  planted.chain_successor.assign(n_items, 0);
  planted.family_of.assign(n_items, 0);
  std::vector<std::vector<ItemId>> bundles, families;
  std::vector<bool> coherent(n_topics, false);
  for (std::size_t t = 0; t < n_topics; ++t) coherent[t] = uniform(rng) < cfg.coherent_topic_fraction;

  for (std::size_t t = 0; t < n_topics; ++t) {
    auto items = topic_items[t];
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t k = 0; k < items.size(); k += static_cast<std::size_t>(cfg.bundle_size)) {
      std::vector<ItemId> b(items.begin() + static_cast<std::ptrdiff_t>(k),
                            items.begin() + static_cast<std::ptrdiff_t>(
                                                std::min(items.size(), k + cfg.bundle_size)));
      for (ItemId i : b) planted.bundle_of[i] = static_cast<std::uint32_t>(bundles.size());
      if (coherent[t]) {
        for (ItemId i : b) planted.family_of[i] = static_cast<std::uint32_t>(families.size());
        families.push_back(b);
      }
      bundles.push_back(std::move(b));
    }
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t k = 0; k < items.size(); k += static_cast<std::size_t>(cfg.chain_length)) {
      const std::size_t e = std::min(items.size(), k + cfg.chain_length);
      for (std::size_t j = k; j < e; ++j)
        planted.chain_successor[items[j]] = items[j + 1 < e ? j + 1 : k];
    }
    if (!coherent[t]) {
      std::shuffle(items.begin(), items.end(), rng);
      for (std::size_t k = 0; k < items.size(); k += static_cast<std::size_t>(cfg.family_size)) {
        std::vector<ItemId> f(items.begin() + static_cast<std::ptrdiff_t>(k),
                              items.begin() + static_cast<std::ptrdiff_t>(
                                                  std::min(items.size(), k + cfg.family_size)));
        for (ItemId i : f) planted.family_of[i] = static_cast<std::uint32_t>(families.size());
        families.push_back(std::move(f));
      }
    }
  }

  std::vector<std::vector<float>> centroid(n_topics), family_dir(families.size());
  for (auto& c : centroid) c = random_unit(rng, cfg.content_dim);
  for (auto& f : family_dir) f = random_unit(rng, cfg.content_dim);

  catalog.content_dim = cfg.content_dim;
  catalog.items.resize(n_items);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (ItemId i = 0; i < n_items; ++i) {
    auto& it = catalog.items[i];
    const auto t = planted.topic_of[i];
    it.id = i;
    it.tag_id = t;
    it.author_id = t * static_cast<std::uint32_t>(cfg.authors_per_topic) +
                   static_cast<std::uint32_t>(rng() % static_cast<std::uint64_t>(cfg.authors_per_topic));
    it.duration_seconds = std::round((10.0 + 110.0 * uniform(rng)) * 10.0) / 10.0;
    if (uniform(rng) < cfg.fresh_item_fraction) {
      it.created_at = cfg.start_time + static_cast<EpochSeconds>(uniform(rng) * 0.9 * span);
    } else {
      it.created_at = cfg.start_time - 1 - static_cast<EpochSeconds>(uniform(rng) * 30 * 86400);
    }
    std::vector<double> v(static_cast<std::size_t>(cfg.content_dim));
    const auto& fam = family_dir[planted.family_of[i]];
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = centroid[t][k] + 0.9 * fam[k] + noise(rng);
    normalize(v);
    it.content.assign(v.begin(), v.end());
  }

  // ---- topic popularity and mechanism profile ---------------------------
  std::vector<double> topic_pop(n_topics);
  for (std::size_t t = 0; t < n_topics; ++t) topic_pop[t] = 1.0 / std::pow(static_cast<double>(t + 1), 0.7);
  std::shuffle(topic_pop.begin(), topic_pop.end(), rng);

  auto random_created_in_topic = [&](std::size_t topic, EpochSeconds ts) -> std::optional<ItemId> {
    const auto& items = topic_items[topic];
    for (int tries = 0; tries < 32; ++tries) {
      const ItemId i = items[rng() % items.size()];
      if (catalog.items[i].created_at < ts) return i;
    }
    for (ItemId i : items)
      if (catalog.items[i].created_at < ts) return i;
    return std::nullopt;
  };

  // ---- users ------------------------------------------------------------
  std::geometric_distribution<int> extra(
      1.0 / (1.0 + std::max(0, cfg.mean_extra_interactions)));
  std::gamma_distribution<double> gamma1(1.0, 1.0), gamma2(2.0, 1.0);
  std::lognormal_distribution<double> interest_noise(0.0, 0.7), explore_noise(0.0, 0.6);

  out.corpus.users.resize(static_cast<std::size_t>(cfg.users));
  for (UserId u = 0; u < static_cast<UserId>(cfg.users); ++u) {
    auto& hist = out.corpus.users[u];
    hist.user = u;

    std::vector<double> affinity(n_topics, 0.0);
    {
      auto pop = topic_pop;
      double total = 0.0;
      std::vector<std::size_t> chosen;
      for (int k = 0; k < cfg.interests_per_user; ++k) {
        const auto t = pick_weighted(rng, pop);
        pop[t] = 0.0;
        chosen.push_back(t);
      }
      for (auto t : chosen) total += (affinity[t] = gamma1(rng) + 0.2);
      for (auto t : chosen) affinity[t] /= total;
    }
    std::vector<double> explore_w(n_topics);
    for (std::size_t t = 0; t < n_topics; ++t) explore_w[t] = affinity[t] > 0.0 ? 0.0 : topic_pop[t];
    if (std::accumulate(explore_w.begin(), explore_w.end(), 0.0) <= 0.0) explore_w = topic_pop;
    std::array<double, 3> mix{};
    for (int m = 0; m < 3; ++m) mix[m] = cfg.channel_mix[m] * gamma2(rng) / 2.0;

    const int n = cfg.min_interactions + (cfg.mean_extra_interactions > 0 ? extra(rng) : 0);
    const int n_sessions = (n + cfg.session_length - 1) / cfg.session_length;
    std::vector<EpochSeconds> starts(static_cast<std::size_t>(n_sessions));
    for (auto& s : starts)
      s = cfg.start_time + static_cast<EpochSeconds>(uniform(rng) * static_cast<double>(span - 3 * 3600));
    std::sort(starts.begin(), starts.end());

    std::deque<Anchor> anchors;
    EpochSeconds ts = cfg.start_time;
    hist.events.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const int session = k / cfg.session_length;
      if (k % cfg.session_length == 0) {
        ts = std::max(starts[static_cast<std::size_t>(session)], ts + 60);
      } else {
        ts += 15 + static_cast<EpochSeconds>(rng() % 76);
      }

      std::optional<ItemId> item;
      bool interest = false;
      const double roll = uniform(rng);
      if (anchors.empty() || roll < cfg.seed_rate) {
        item = random_created_in_topic(pick_weighted(rng, affinity), ts);
        interest = true;
      } else if (roll < cfg.seed_rate + cfg.explore_rate) {
        item = random_created_in_topic(pick_weighted(rng, explore_w), ts);
      } else {
        const Anchor& a = (uniform(rng) < cfg.continuation_rate)
                              ? anchors.back()
                              : [&]() -> const Anchor& {
                                  std::vector<double> w;
                                  w.reserve(anchors.size());
                                  for (const auto& x : anchors) w.push_back(x.watch);
                                  return anchors[pick_weighted(rng, w)];
                                }();
        const auto topic = planted.topic_of[a.item];
        std::vector<double> mw(mix.begin(), mix.end());
        mw[topic % 3] *= cfg.mechanism_boost;
        const auto mech = pick_weighted(rng, mw);
        interest = true;
        if (mech == 0) {
          const auto& b = bundles[planted.bundle_of[a.item]];
          for (int tries = 0; tries < 8 && !item; ++tries) {
            const ItemId c = b[rng() % b.size()];
            if (c != a.item && catalog.items[c].created_at < ts) item = c;
          }
        } else if (mech == 1) {
          ItemId c = planted.chain_successor[a.item];
          for (int hop = 0; hop < cfg.chain_length && c != a.item; ++hop) {
            if (catalog.items[c].created_at < ts) {
              item = c;
              break;
            }
            c = planted.chain_successor[c];
          }
        } else {
          const auto& f = families[planted.family_of[a.item]];
          std::vector<double> w(f.size(), 0.0);
          for (std::size_t j = 0; j < f.size(); ++j) {
            const auto& it = catalog.items[f[j]];
            if (f[j] == a.item || it.created_at >= ts) continue;
            const double age_days = static_cast<double>(ts - it.created_at) / 86400.0;
            w[j] = 0.2 + std::exp(-age_days / 2.0) * 3.0 * (it.created_at >= cfg.start_time ? 1.0 : 0.0);
          }
          if (std::accumulate(w.begin(), w.end(), 0.0) > 0.0) item = f[pick_weighted(rng, w)];
        }
        if (!item) item = random_created_in_topic(topic, ts);
      }
      if (!item) item = random_created_in_topic(pick_weighted(rng, topic_pop), ts);
      if (!item) continue;

      const auto topic = planted.topic_of[*item];
      double watch;
      if (interest) {
        watch = (12.0 + 60.0 * affinity[topic]) * interest_noise(rng);
      } else {
        watch = 6.0 * explore_noise(rng);
      }
      watch = std::round(std::min(watch, 3600.0) * 1000.0) / 1000.0;

      Interaction e;
      e.user = u;
      e.item = *item;
      e.ts = ts;
      e.watch_seconds = watch;
      if (uniform(rng) < std::min(0.5, watch / 200.0)) e.feedback |= kLike;
      if (interest && uniform(rng) < 0.02) e.feedback |= kFollow;
      if (uniform(rng) < 0.02) e.feedback |= kComment;
      if (uniform(rng) < 0.01) e.feedback |= kShare;
      hist.events.push_back(e);

      if (interest && watch >= kDefaultEffectiveViewSeconds && affinity[topic] > 0.0) {
        anchors.push_back({*item, watch});
        if (anchors.size() > static_cast<std::size_t>(cfg.anchor_horizon)) anchors.pop_front();
      }
    }
  }
  return out;
}

}  // namespace capts
