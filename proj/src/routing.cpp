#include "capts/routing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace capts {

int RoutingConfig::max_budget() const { return *std::max_element(budgets.begin(), budgets.end()); }

void RoutingConfig::validate() const {
  for (int b : budgets)
    if (b < 0) throw ConfigError("routing budgets must be >= 0");
  if (eta < 0.0) throw ConfigError("routing.eta must be >= 0");
  if (!(nic_rise_factor > 0.0)) throw ConfigError("routing.nic_rise_factor must be positive");
  if (!(nic_recent_fraction > 0.0 && nic_recent_fraction < 1.0))
    throw ConfigError("routing.nic_recent_fraction must lie in (0, 1)");
}

std::vector<ItemId> RoutingAssignment::triggers(std::size_t k) const {
  std::vector<ItemId> out;
  for (const auto& r : selected.at(k)) out.push_back(r.item);
  return out;
}

RoutingAssignment route(std::span<const ItemId> triggers, std::span<const double> scores,
                        const std::vector<ChannelId>& roster, const RoutingConfig& cfg) {
  const auto R = roster.size();
  if (scores.size() != triggers.size() * R) throw ConfigError("route: score matrix does not match triggers");
  RoutingAssignment a;
  a.roster = roster;
  a.selected.resize(R);
  std::vector<RoutedTrigger> all(triggers.size());
  for (std::size_t k = 0; k < R; ++k) {
    for (std::size_t t = 0; t < triggers.size(); ++t) all[t] = {triggers[t], scores[t * R + k]};
    const auto b = std::min(all.size(), static_cast<std::size_t>(std::max(0, cfg.budget(roster[k]))));
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(b), all.end(),
                      [](const RoutedTrigger& x, const RoutedTrigger& y) {
                        return x.score != y.score ? x.score > y.score : x.item < y.item;
                      });
    a.selected[k].assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return a;
}

std::vector<double> routing_scores(std::span<const TriggerPrediction> predictions, double eta) {
  std::vector<double> s;
  for (const auto& p : predictions)
    for (const auto& c : p.channels) s.push_back(routing_score(c.calibrated, c.uniqueness, eta));
  return s;
}

RoutingAssignment route_predictions(std::span<const TriggerPrediction> predictions,
                                    const std::vector<ChannelId>& roster, const RoutingConfig& cfg) {
  std::vector<ItemId> items;
  for (const auto& p : predictions) items.push_back(p.item);
  return route(items, routing_scores(predictions, cfg.eta), roster, cfg);
}

// ---- baselines ----------------------------------------------------------

namespace {

struct Candidate {
  ItemId item = 0;
  std::size_t last_index = 0;  // index of the most recent effective view
  double watch = 0.0;          // watch time of that view
};

// Distinct effective-view items before the prefix end, most recent first.
std::vector<Candidate> effective_candidates(const UserHistory& h, std::size_t prefix_len, double threshold) {
  std::vector<Candidate> out;
  std::unordered_set<ItemId> seen;
  for (std::size_t i = std::min(prefix_len, h.events.size()); i-- > 0;) {
    const auto& e = h.events[i];
    if (!is_effective_view(e, threshold)) continue;
    if (seen.insert(e.item).second) out.push_back({e.item, i, e.watch_seconds});
  }
  return out;
}

}  // namespace

std::vector<ItemId> baseline_recent(const UserHistory& h, std::size_t prefix_len, int n, double threshold) {
  std::vector<ItemId> out;
  for (const auto& c : effective_candidates(h, prefix_len, threshold)) {
    if (static_cast<int>(out.size()) >= n) break;
    out.push_back(c.item);
  }
  return out;
}

std::vector<ItemId> baseline_tagtop(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog, int n,
                                    double threshold) {
  const auto end = std::min(prefix_len, h.events.size());
  std::map<std::uint32_t, std::size_t> exposure;
  for (std::size_t i = 0; i < end; ++i) ++exposure[catalog.at(h.events[i].item).tag_id];

  std::map<std::uint32_t, std::vector<Candidate>> by_tag;
  for (const auto& c : effective_candidates(h, prefix_len, threshold))
    by_tag[catalog.at(c.item).tag_id].push_back(c);

  std::vector<std::pair<std::uint32_t, std::size_t>> tags(exposure.begin(), exposure.end());
  std::stable_sort(tags.begin(), tags.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::vector<ItemId>> queues;
  for (const auto& [tag, count] : tags) {
    auto it = by_tag.find(tag);
    if (it == by_tag.end()) continue;
    auto& cands = it->second;
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.watch != b.watch ? a.watch > b.watch : a.item < b.item;
    });
    std::unordered_set<std::uint32_t> authors;
    std::vector<ItemId> q;
    for (const auto& c : cands)
      if (authors.insert(catalog.at(c.item).author_id).second) q.push_back(c.item);
    queues.push_back(std::move(q));
  }

  std::vector<ItemId> out;
  for (std::size_t round = 0; static_cast<int>(out.size()) < n; ++round) {
    bool any = false;
    for (const auto& q : queues) {
      if (round >= q.size()) continue;
      any = true;
      out.push_back(q[round]);
      if (static_cast<int>(out.size()) >= n) break;
    }
    if (!any) break;
  }
  return out;
}

std::vector<ItemId> baseline_ltv(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog, int n,
                                 double threshold) {
  const auto end = std::min(prefix_len, h.events.size());
  auto cands = effective_candidates(h, prefix_len, threshold);
  // Suffix counts of effective views per author and per tag, plus both.
  std::unordered_map<std::uint32_t, long> author_after, tag_after;
  std::unordered_map<std::uint64_t, long> both_after;
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.last_index > b.last_index; });
  std::size_t ci = 0;
  std::vector<std::pair<ItemId, long>> scores;
  for (std::size_t i = end; i-- > 0;) {
    while (ci < cands.size() && cands[ci].last_index == i) {
      const auto& it = catalog.at(cands[ci].item);
      const auto key = (static_cast<std::uint64_t>(it.author_id) << 32) | it.tag_id;
      scores.emplace_back(cands[ci].item, author_after[it.author_id] + tag_after[it.tag_id] - both_after[key]);
      ++ci;
    }
    const auto& e = h.events[i];
    if (!is_effective_view(e, threshold)) continue;
    const auto& it = catalog.at(e.item);
    ++author_after[it.author_id];
    ++tag_after[it.tag_id];
    ++both_after[(static_cast<std::uint64_t>(it.author_id) << 32) | it.tag_id];
  }
  std::sort(scores.begin(), scores.end(),
            [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  std::vector<ItemId> out;
  for (const auto& [item, s] : scores) {
    if (static_cast<int>(out.size()) >= n) break;
    out.push_back(item);
  }
  return out;
}

std::vector<ItemId> baseline_nic(const UserHistory& h, std::size_t prefix_len, const Catalog& catalog, int n,
                                 double rise_factor, double recent_fraction, double threshold) {
  const auto end = std::min(prefix_len, h.events.size());
  std::vector<std::size_t> views;
  for (std::size_t i = 0; i < end; ++i)
    if (is_effective_view(h.events[i], threshold)) views.push_back(i);
  const auto total = views.size();
  const auto recent_n = static_cast<std::size_t>(std::ceil(recent_fraction * static_cast<double>(total)));
  const auto early_n = total - recent_n;

  std::unordered_set<std::uint32_t> rising;
  if (recent_n > 0) {
    std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> counts;  // tag -> (early, recent)
    for (std::size_t k = 0; k < total; ++k) {
      auto& c = counts[catalog.at(h.events[views[k]].item).tag_id];
      (k < early_n ? c.first : c.second) += 1;
    }
    for (const auto& [tag, c] : counts) {
      const double recent_rate = static_cast<double>(c.second) / static_cast<double>(recent_n);
      const double early_rate = early_n > 0 ? static_cast<double>(c.first) / static_cast<double>(early_n) : 0.0;
      if (recent_rate > rise_factor * early_rate) rising.insert(tag);
    }
  }
  if (rising.empty()) return baseline_recent(h, prefix_len, n, threshold);

  std::vector<ItemId> out;
  for (const auto& c : effective_candidates(h, prefix_len, threshold)) {
    if (static_cast<int>(out.size()) >= n) break;
    if (rising.count(catalog.at(c.item).tag_id)) out.push_back(c.item);
  }
  return out;
}

RoutingAssignment shared_assignment(std::span<const ItemId> list, const std::vector<ChannelId>& roster,
                                    const RoutingConfig& cfg) {
  RoutingAssignment a;
  a.roster = roster;
  a.selected.resize(roster.size());
  for (std::size_t k = 0; k < roster.size(); ++k) {
    const auto b = std::min(list.size(), static_cast<std::size_t>(std::max(0, cfg.budget(roster[k]))));
    for (std::size_t r = 0; r < b; ++r)
      a.selected[k].push_back({list[r], static_cast<double>(list.size() - r)});
  }
  return a;
}

}  // namespace capts
