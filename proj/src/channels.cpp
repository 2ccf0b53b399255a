#include "capts/channels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capts/text_io.hpp"

namespace capts {

namespace {

std::vector<std::vector<ItemId>> effective_item_sets(const Corpus& corpus, EpochSeconds as_of,
                                                     double threshold) {
  std::vector<std::vector<ItemId>> sets;
  sets.reserve(corpus.users.size());
  for (const auto& u : corpus.users) {
    std::vector<ItemId> s;
    for (const auto& e : u.events) {
      if (e.ts > as_of) break;
      if (is_effective_view(e, threshold)) s.push_back(e.item);
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    sets.push_back(std::move(s));
  }
  return sets;
}

// splitmix64; small, seedable, and identical on every platform.
struct SplitMix {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

}  // namespace

IndexSnapshot build_cooccurrence_snapshot(const Corpus& corpus, EpochSeconds as_of, int k_ret,
                                          double alpha, double threshold, Exec exec) {
  IndexSnapshot s;
  s.channel = ChannelId::cooccurrence;
  s.as_of = as_of;
  s.k_ret = k_ret;
  s.neighbors = kernels::swing_topk(effective_item_sets(corpus, as_of, threshold),
                                    corpus.catalog.size(), alpha, k_ret, exec);
  return s;
}

ItemVectors train_item_vectors(const Corpus& corpus, EpochSeconds as_of,
                               const EmbeddingParams& params, double threshold) {
  if (params.dim < 4) throw ConfigError("embedding dim must be >= 4");
  const std::size_t n = corpus.catalog.size();
  const auto dim = static_cast<std::size_t>(params.dim);

  std::vector<std::vector<ItemId>> sequences;
  std::vector<std::uint64_t> counts(n, 0);
  std::size_t tokens = 0;
  for (const auto& u : corpus.users) {
    std::vector<ItemId> seq;
    for (const auto& e : u.events) {
      if (e.ts > as_of) break;
      if (!is_effective_view(e, threshold)) continue;
      seq.push_back(e.item);
      ++counts[e.item];
    }
    tokens += seq.size();
    if (seq.size() >= 2) sequences.push_back(std::move(seq));
  }

  ItemVectors out;
  out.dim = params.dim;
  out.seen.assign(n, 0);
  std::vector<ItemId> vocab;
  for (ItemId i = 0; i < n; ++i)
    if (counts[i] > 0) {
      out.seen[i] = 1;
      vocab.push_back(i);
    }
  if (vocab.size() < 2) throw ConfigError("embedding channel needs at least 2 distinct items");

  std::vector<double> in(n * dim, 0.0), ctx(n * dim, 0.0);
  for (ItemId i : vocab) {
    SplitMix init{params.seed ^ (0x51ed27a5ULL * (static_cast<std::uint64_t>(i) + 1))};
    for (std::size_t x = 0; x < dim; ++x)
      in[i * dim + x] = (init.uniform() - 0.5) / static_cast<double>(dim);
  }

  std::vector<double> cumulative;
  cumulative.reserve(vocab.size());
  double acc = 0.0;
  for (ItemId i : vocab) cumulative.push_back(acc += std::pow(static_cast<double>(counts[i]), 0.75));

  SplitMix rng{params.seed * 0x2545f4914f6cdd1dULL + 1};
  auto sample_negative = [&]() {
    const double r = rng.uniform() * acc;
    const auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin();
    return vocab[std::min<std::size_t>(static_cast<std::size_t>(pos), vocab.size() - 1)];
  };
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };

  const double total_steps = static_cast<double>(std::max<std::size_t>(1, tokens)) * params.epochs;
  double processed = 0.0;
  std::vector<double> grad(dim);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    for (const auto& seq : sequences) {
      for (std::size_t p = 0; p < seq.size(); ++p, processed += 1.0) {
        const double lr = params.learning_rate * std::max(1e-4, 1.0 - processed / total_steps);
        const ItemId center = seq[p];
        const std::size_t lo = p >= static_cast<std::size_t>(params.window) ? p - params.window : 0;
        const std::size_t hi = std::min(seq.size(), p + params.window + 1);
        for (std::size_t q = lo; q < hi; ++q) {
          const ItemId context = seq[q];
          if (q == p || context == center) continue;
          double* v = &in[context * dim];
          std::fill(grad.begin(), grad.end(), 0.0);
          for (int neg = 0; neg <= params.negatives; ++neg) {
            ItemId target = center;
            double label = 1.0;
            if (neg > 0) {
              target = sample_negative();
              if (target == center) continue;
              label = 0.0;
            }
            double* o = &ctx[target * dim];
            double dot = 0.0;
            for (std::size_t x = 0; x < dim; ++x) dot += v[x] * o[x];
            const double g = (label - sigmoid(dot)) * lr;
            for (std::size_t x = 0; x < dim; ++x) {
              grad[x] += g * o[x];
              o[x] += g * v[x];
            }
          }
          for (std::size_t x = 0; x < dim; ++x) v[x] += grad[x];
        }
      }
    }
  }

  out.values.assign(n * dim, 0.0f);
  for (ItemId i : vocab) {
    double norm = 0.0;
    for (std::size_t x = 0; x < dim; ++x) norm += in[i * dim + x] * in[i * dim + x];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t x = 0; x < dim; ++x)
      out.values[i * dim + x] = static_cast<float>(in[i * dim + x] / norm);
  }
  return out;
}

IndexSnapshot build_embedding_snapshot(const Corpus& corpus, EpochSeconds as_of, int k_ret,
                                       const EmbeddingParams& params, double threshold, Exec exec) {
  const auto vecs = train_item_vectors(corpus, as_of, params, threshold);
  IndexSnapshot s;
  s.channel = ChannelId::embedding;
  s.as_of = as_of;
  s.k_ret = k_ret;
  s.neighbors = kernels::cosine_topk(vecs.values, vecs.dim, vecs.seen, k_ret, exec);
  return s;
}

IndexSnapshot build_content_snapshot(const Catalog& catalog, EpochSeconds t, int k_ret, Exec exec) {
  const std::size_t n = catalog.size();
  const auto dim = static_cast<std::size_t>(catalog.content_dim);
  std::vector<float> values(n * dim, 0.0f);
  std::vector<std::uint8_t> eligible(n, 0);
  for (const auto& it : catalog.items) {
    if (it.created_at > t) continue;
    if (it.content.size() != dim) throw ConfigError(fmt::format("item {} lacks a content vector", it.id));
    eligible[it.id] = 1;
    std::copy(it.content.begin(), it.content.end(), values.begin() + static_cast<std::ptrdiff_t>(it.id * dim));
  }
  IndexSnapshot s;
  s.channel = ChannelId::content;
  s.as_of = t;
  s.k_ret = k_ret;
  s.neighbors = kernels::cosine_topk(values, catalog.content_dim, eligible, k_ret, exec);
  return s;
}

IndexSnapshot build_snapshot(ChannelId channel, const Corpus& corpus, EpochSeconds as_of,
                             const SnapshotConfig& cfg) {
  switch (channel) {
    case ChannelId::cooccurrence:
      return build_cooccurrence_snapshot(corpus, as_of, cfg.k_ret, cfg.swing_alpha,
                                         cfg.effective_view_seconds, cfg.exec);
    case ChannelId::embedding:
      return build_embedding_snapshot(corpus, as_of, cfg.k_ret, cfg.embedding,
                                      cfg.effective_view_seconds, cfg.exec);
    case ChannelId::content:
      return build_content_snapshot(corpus.catalog, as_of, cfg.k_ret, cfg.exec);
  }
  throw ConfigError("unknown channel");
}

// ---- replay -------------------------------------------------------------

void ReplayAudit::record(ChannelId c, EpochSeconds as_of, EpochSeconds tau0, EpochSeconds delta) {
  replays_.fetch_add(1, std::memory_order_relaxed);
  if (as_of > tau0 - delta) violations_.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lock(mu_);
  consulted_.emplace(c, as_of);
}

std::set<std::pair<ChannelId, EpochSeconds>> ReplayAudit::consulted() const {
  std::lock_guard lock(mu_);
  return consulted_;
}

void SnapshotStore::add(std::shared_ptr<const IndexSnapshot> snapshot) {
  auto& list = by_channel_[snapshot->channel];
  if (!list.empty() && list.back()->as_of >= snapshot->as_of)
    throw ConfigError(fmt::format("snapshot as_of must increase within channel {}",
                                  channel_name(snapshot->channel)));
  list.push_back(std::move(snapshot));
}

const IndexSnapshot* SnapshotStore::select(ChannelId c, EpochSeconds tau0, EpochSeconds delta) const {
  const auto it = by_channel_.find(c);
  if (it == by_channel_.end()) return nullptr;
  const auto& list = it->second;
  const EpochSeconds limit = tau0 - delta;
  auto pos = std::upper_bound(list.begin(), list.end(), limit,
                              [](EpochSeconds t, const auto& s) { return t < s->as_of; });
  if (pos == list.begin()) return nullptr;
  return std::prev(pos)->get();
}

const std::vector<std::shared_ptr<const IndexSnapshot>>& SnapshotStore::snapshots(ChannelId c) const {
  static const std::vector<std::shared_ptr<const IndexSnapshot>> empty;
  const auto it = by_channel_.find(c);
  return it == by_channel_.end() ? empty : it->second;
}

std::vector<ChannelId> SnapshotStore::channels() const {
  std::vector<ChannelId> out;
  for (const auto& [c, list] : by_channel_) out.push_back(c);
  return out;
}

std::size_t SnapshotStore::size() const {
  std::size_t n = 0;
  for (const auto& [c, list] : by_channel_) n += list.size();
  return n;
}

std::span<const Neighbor> replay_retrieve(const SnapshotStore& store, ChannelId c, ItemId trigger,
                                          EpochSeconds tau0, EpochSeconds delta, ReplayAudit* audit) {
  const IndexSnapshot* snap = store.select(c, tau0, delta);
  if (!snap)
    throw ReplayUnavailable(fmt::format("no {} snapshot at or before {}", channel_name(c), tau0 - delta));
  if (audit) audit->record(c, snap->as_of, tau0, delta);
  return snap->lookup(trigger);
}

std::vector<EpochSeconds> snapshot_schedule(const Corpus& corpus, EpochSeconds cadence) {
  if (cadence <= 0) throw ConfigError("snapshot cadence must be positive");
  std::vector<EpochSeconds> out;
  if (corpus.interaction_count() == 0) return out;
  const EpochSeconds first = corpus.first_ts();
  const EpochSeconds last = corpus.last_ts();
  EpochSeconds t = (first / cadence + 1) * cadence;
  for (; t <= last; t += cadence) out.push_back(t);
  return out;
}

SnapshotStore build_snapshot_store(const Corpus& corpus, const SnapshotConfig& cfg) {
  SnapshotStore store;
  const auto times = snapshot_schedule(corpus, cfg.cadence_seconds);
  for (ChannelId c : cfg.roster) {
    for (EpochSeconds t : times) {
      store.add(std::make_shared<const IndexSnapshot>(build_snapshot(c, corpus, t, cfg)));
    }
    spdlog::debug("built {} {} snapshots", times.size(), channel_name(c));
  }
  return store;
}

// ---- files --------------------------------------------------------------

std::string serialize_snapshot(const IndexSnapshot& s) {
  std::string out = fmt::format("{} channel={} as_of={} k_ret={}\n", kSnapshotHeader,
                                channel_name(s.channel), s.as_of, s.k_ret);
  auto it = std::back_inserter(out);
  for (std::size_t i = 0; i < s.neighbors.size(); ++i) {
    fmt::format_to(it, "{}", i);
    for (const auto& nb : s.neighbors[i]) fmt::format_to(it, " {}:{}", nb.item, nb.score);
    out.push_back('\n');
  }
  return out;
}

IndexSnapshot parse_snapshot(std::string_view text) {
  IndexSnapshot s;
  std::size_t pos = text.find('\n');
  const std::string_view header = text.substr(0, pos);
  if (!header.starts_with(kSnapshotHeader)) throw IoError("missing snapshot header");
  for (auto field : split_fields(header.substr(std::string_view(kSnapshotHeader).size()), ' ')) {
    if (field.starts_with("channel=")) {
      const auto c = parse_channel(field.substr(8));
      if (!c) throw IoError(fmt::format("unknown channel in snapshot header: {}", field));
      s.channel = *c;
    } else if (field.starts_with("as_of=")) {
      s.as_of = parse_number<EpochSeconds>(field.substr(6));
    } else if (field.starts_with("k_ret=")) {
      s.k_ret = parse_number<int>(field.substr(6));
    }
  }
  while (pos != std::string_view::npos && pos + 1 < text.size()) {
    const std::size_t end = text.find('\n', pos + 1);
    const std::string_view line = text.substr(pos + 1, end == std::string_view::npos ? end : end - pos - 1);
    pos = end;
    if (line.empty()) continue;
    const auto fields = split_fields(line, ' ');
    const auto item = parse_number<ItemId>(fields[0]);
    if (item >= s.neighbors.size()) s.neighbors.resize(item + 1);
    auto& list = s.neighbors[item];
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const auto colon = fields[k].find(':');
      if (colon == std::string_view::npos) throw IoError("bad neighbor entry in snapshot");
      list.push_back({parse_number<ItemId>(fields[k].substr(0, colon)),
                      parse_number<float>(fields[k].substr(colon + 1))});
    }
  }
  return s;
}

void write_snapshot(const IndexSnapshot& s, const std::filesystem::path& path) {
  TextWriter w(path);
  auto text = serialize_snapshot(s);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  w.line(text);
  w.close();
}

IndexSnapshot read_snapshot(const std::filesystem::path& path) { return parse_snapshot(read_file(path)); }

std::string snapshot_filename(ChannelId c, EpochSeconds as_of) {
  return fmt::format("{}-{}.snap", channel_name(c), as_of);
}

}  // namespace capts
