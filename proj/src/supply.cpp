#include "capts/supply.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "capts/text_io.hpp"

namespace capts {

void SupplyConfig::validate() const {
  if (long_history < 1 || recent_n < 1 || top_m < 1) throw ConfigError("supply sizes must be >= 1");
  if (ttl_seconds < 0) throw ConfigError("supply.ttl_seconds must be >= 0");
}

double ScoredTrigger::max_score() const {
  return scores.empty() ? 0.0 : *std::max_element(scores.begin(), scores.end());
}

namespace {

void sort_by_max(std::vector<ScoredTrigger>& v) {
  std::sort(v.begin(), v.end(), [](const ScoredTrigger& a, const ScoredTrigger& b) {
    const double x = a.max_score(), y = b.max_score();
    return x != y ? x > y : a.item < b.item;
  });
}

}  // namespace

void TriggerCache::put(CacheEntry entry) {
  auto p = std::make_shared<const CacheEntry>(std::move(entry));
  std::lock_guard lock(mu_);
  entries_[p->user] = std::move(p);
}

std::shared_ptr<const CacheEntry> TriggerCache::get(UserId user, EpochSeconds now,
                                                    std::string_view checkpoint) const {
  std::shared_ptr<const CacheEntry> e;
  {
    std::lock_guard lock(mu_);
    const auto it = entries_.find(user);
    if (it != entries_.end()) e = it->second;
  }
  if (!e || !e->valid_at(now) || e->checkpoint != checkpoint) {
    ++misses_;
    return nullptr;
  }
  ++hits_;
  return e;
}

std::size_t TriggerCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void TriggerCache::save(const std::filesystem::path& path) const {
  TextWriter w(path);
  w.line(kCacheHeader);
  std::lock_guard lock(mu_);
  for (const auto& [user, e] : entries_) {
    std::string line = fmt::format("{} {} {} {} {}", e->user, e->refreshed_at, e->ttl_seconds,
                                   e->checkpoint.empty() ? "-" : e->checkpoint, e->triggers.size());
    for (const auto& t : e->triggers) {
      line += fmt::format(" {}:", t.item);
      for (std::size_t k = 0; k < t.scores.size(); ++k) line += fmt::format("{}{}", k ? "," : "", t.scores[k]);
    }
    w.line(line);
  }
  w.close();
}

void TriggerCache::load(const std::filesystem::path& path) {
  std::map<UserId, std::shared_ptr<const CacheEntry>> loaded;
  TextReader r(path);
  std::string line;
  if (!r.next(line) || line != kCacheHeader) throw IoError(fmt::format("{}: missing cache header", path.string()));
  while (r.next(line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line, ' ');
    if (f.size() < 5) throw IoError(fmt::format("{}:{}: short cache record", path.string(), r.line_no()));
    CacheEntry e;
    e.user = parse_number<UserId>(f[0]);
    e.refreshed_at = parse_number<EpochSeconds>(f[1]);
    e.ttl_seconds = parse_number<EpochSeconds>(f[2]);
    e.checkpoint = f[3] == "-" ? std::string() : std::string(f[3]);
    const auto n = parse_number<std::size_t>(f[4]);
    if (f.size() != 5 + n) throw IoError(fmt::format("{}:{}: trigger count mismatch", path.string(), r.line_no()));
    for (std::size_t i = 0; i < n; ++i) {
      const auto tok = f[5 + i];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw IoError(fmt::format("{}:{}: bad trigger '{}'", path.string(), r.line_no(), tok));
      ScoredTrigger t;
      t.item = parse_number<ItemId>(tok.substr(0, colon));
      for (auto s : split_fields(tok.substr(colon + 1), ',')) t.scores.push_back(parse_number<double>(s));
      e.triggers.push_back(std::move(t));
    }
    const auto user = e.user;
    loaded[user] = std::make_shared<const CacheEntry>(std::move(e));
  }
  std::lock_guard lock(mu_);
  entries_ = std::move(loaded);
}

std::vector<ScoredTrigger> score_candidates(const CatrModel& model, const UserHistory& h, std::size_t prefix_len,
                                            EpochSeconds tau0, int limit, double eta, double threshold) {
  std::vector<ItemId> cands;
  std::unordered_set<ItemId> seen;
  for (std::size_t i = std::min(prefix_len, h.events.size()); i-- > 0 && static_cast<int>(cands.size()) < limit;)
    if (seen.insert(h.events[i].item).second) cands.push_back(h.events[i].item);
  std::vector<ScoredTrigger> out;
  if (cands.empty()) return out;
  const auto features = build_features(h, prefix_len, tau0, cands, model.config().seq_len, threshold);
  for (const auto& p : predict(model, features)) {
    ScoredTrigger t{p.item, {}};
    for (const auto& c : p.channels) t.scores.push_back(routing_score(c.calibrated, c.uniqueness, eta));
    out.push_back(std::move(t));
  }
  return out;
}

CacheEntry nearline_refresh(const CatrModel& model, const std::string& checkpoint, const UserHistory& h,
                            std::size_t prefix_len, EpochSeconds now, const SupplyConfig& cfg, double eta,
                            double threshold) {
  CacheEntry e;
  e.user = h.user;
  e.refreshed_at = now;
  e.ttl_seconds = cfg.ttl_seconds;
  e.checkpoint = checkpoint;
  e.triggers = score_candidates(model, h, prefix_len, now, cfg.long_history, eta, threshold);
  sort_by_max(e.triggers);
  if (static_cast<int>(e.triggers.size()) > cfg.top_m) e.triggers.resize(static_cast<std::size_t>(cfg.top_m));
  return e;
}

std::vector<ScoredTrigger> merge_supply(std::vector<ScoredTrigger> online, std::span<const ScoredTrigger> cached) {
  std::vector<ScoredTrigger> out;
  std::unordered_map<ItemId, std::size_t> index;
  auto absorb = [&](const ScoredTrigger& t) {
    const auto [it, fresh] = index.emplace(t.item, out.size());
    if (fresh) {
      out.push_back(t);
      return;
    }
    auto& o = out[it->second];
    if (o.scores.size() != t.scores.size()) throw ConfigError("merge_supply: channel count mismatch");
    for (std::size_t k = 0; k < o.scores.size(); ++k) o.scores[k] = std::max(o.scores[k], t.scores[k]);
  };
  for (const auto& t : online) absorb(t);
  for (const auto& t : cached) absorb(t);
  sort_by_max(out);
  return out;
}

SupplyResult online_supply(const CatrModel& model, const std::string& checkpoint, const UserHistory& h,
                           std::size_t prefix_len, EpochSeconds tau0, const TriggerCache& cache,
                           const SupplyConfig& cfg, double eta, double threshold) {
  SupplyResult r;
  auto online = score_candidates(model, h, prefix_len, tau0, cfg.recent_n, eta, threshold);
  const auto entry = cache.get(h.user, tau0, checkpoint);
  r.cache_hit = entry != nullptr;
  r.triggers = merge_supply(std::move(online), entry ? std::span<const ScoredTrigger>(entry->triggers)
                                                     : std::span<const ScoredTrigger>());
  return r;
}

RoutingAssignment route_supply(std::span<const ScoredTrigger> triggers, const std::vector<ChannelId>& roster,
                               const RoutingConfig& cfg) {
  std::vector<ItemId> items;
  std::vector<double> scores;
  for (const auto& t : triggers) {
    if (t.scores.size() != roster.size()) throw ConfigError("route_supply: channel count mismatch");
    items.push_back(t.item);
    scores.insert(scores.end(), t.scores.begin(), t.scores.end());
  }
  return route(items, scores, roster, cfg);
}

}  // namespace capts
