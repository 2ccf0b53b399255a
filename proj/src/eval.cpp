#include "capts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "capts/text_io.hpp"

namespace capts {

void EvalConfig::validate() const {
  if (k_grid.empty()) throw ConfigError("eval.k_grid is empty");
  for (int k : k_grid)
    if (k < 1) throw ConfigError("eval.k_grid entries must be >= 1");
  if (test_views < 1) throw ConfigError("eval.test_views must be >= 1");
  if (epsilon <= 0.0) throw ConfigError("eval.epsilon must be positive");
  if (methods.empty()) throw ConfigError("eval.methods is empty");
}

std::vector<ItemId> interleave_topk(std::span<const std::span<const Neighbor>> lists, int k) {
  std::vector<ItemId> out;
  std::unordered_set<ItemId> seen;
  std::size_t longest = 0;
  for (const auto& l : lists) longest = std::max(longest, l.size());
  for (std::size_t rank = 0; rank < longest && static_cast<int>(out.size()) < k; ++rank) {
    for (const auto& l : lists) {
      if (rank >= l.size()) continue;
      if (seen.insert(l[rank].item).second) {
        out.push_back(l[rank].item);
        if (static_cast<int>(out.size()) >= k) break;
      }
    }
  }
  return out;
}

std::vector<ItemId> channel_topk(const SnapshotStore& store, ChannelId c, std::span<const ItemId> triggers,
                                 EpochSeconds tau0, int k, EpochSeconds delta, ReplayAudit* audit) {
  std::vector<std::span<const Neighbor>> lists;
  lists.reserve(triggers.size());
  for (ItemId t : triggers) lists.push_back(replay_retrieve(store, c, t, tau0, delta, audit));
  return interleave_topk(lists, k);
}

std::optional<double> recall(std::span<const ItemId> retrieved, std::span<const ItemId> window_items) {
  std::unordered_set<ItemId> window(window_items.begin(), window_items.end());
  if (window.empty()) return std::nullopt;
  std::unordered_set<ItemId> hit;
  for (ItemId j : retrieved)
    if (window.count(j)) hit.insert(j);
  return static_cast<double>(hit.size()) / static_cast<double>(window.size());
}

std::optional<double> recall_union(const std::vector<std::vector<ItemId>>& per_channel,
                                   std::span<const ItemId> window_items) {
  std::vector<ItemId> all;
  for (const auto& l : per_channel) all.insert(all.end(), l.begin(), l.end());
  return recall(all, window_items);
}

std::vector<double> uniq_at_k(const std::vector<std::vector<ItemId>>& per_channel, double epsilon) {
  std::vector<std::vector<ItemId>> sorted(per_channel.size());
  for (std::size_t c = 0; c < per_channel.size(); ++c) {
    sorted[c] = per_channel[c];
    std::sort(sorted[c].begin(), sorted[c].end());
    sorted[c].erase(std::unique(sorted[c].begin(), sorted[c].end()), sorted[c].end());
  }
  std::vector<double> out(per_channel.size(), 0.0);
  for (std::size_t c = 0; c < sorted.size(); ++c) {
    std::size_t unique = 0;
    for (ItemId j : sorted[c]) {
      bool elsewhere = false;
      for (std::size_t o = 0; o < sorted.size() && !elsewhere; ++o)
        elsewhere = o != c && std::binary_search(sorted[o].begin(), sorted[o].end(), j);
      if (!elsewhere) ++unique;
    }
    out[c] = static_cast<double>(unique) / (static_cast<double>(sorted[c].size()) + epsilon);
  }
  return out;
}

PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  PairedTest r;
  r.n = std::min(a.size(), b.size());
  if (r.n == 0) {
    r.degenerate = true;
    return r;
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(r.n);
  r.mean_diff = mean;
  if (r.n < 2) {
    r.degenerate = true;
    return r;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(r.n - 1);
  const double floor = 1e-9 * std::max(1.0, std::abs(mean));
  if (var <= floor * floor) {
    r.degenerate = true;
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(r.n));
  boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

RequestMetrics score_assignment(const RoutingAssignment& a, const SnapshotStore& store, const RequestInstance& req,
                                std::span<const int> k_grid, double epsilon, EpochSeconds delta,
                                ReplayAudit* audit) {
  RequestMetrics m;
  m.request_id = req.request_id;
  std::vector<ItemId> window;
  for (const auto& w : req.future_window) window.push_back(w.item);
  const int k_max = *std::max_element(k_grid.begin(), k_grid.end());
  const auto R = a.roster.size();
  std::vector<std::vector<ItemId>> full(R);
  for (std::size_t c = 0; c < R; ++c)
    full[c] = channel_topk(store, a.roster[c], a.triggers(c), req.tau0, k_max, delta, audit);

  for (int k : k_grid) {
    std::vector<std::vector<ItemId>> cut(R);
    std::vector<double> per;
    for (std::size_t c = 0; c < R; ++c) {
      cut[c].assign(full[c].begin(), full[c].begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(full[c].size())));
      per.push_back(recall(cut[c], window).value_or(0.0));
    }
    m.union_recall.push_back(recall_union(cut, window).value_or(0.0));
    m.channel_recall.push_back(std::move(per));
    m.uniq.push_back(uniq_at_k(cut, epsilon));
  }
  return m;
}

const MethodRow* EvalReport::row(std::string_view method, int k) const {
  for (const auto& r : rows)
    if (r.method == method && r.k == k) return &r;
  return nullptr;
}

EvalReport summarize(const std::vector<ChannelId>& roster, std::span<const int> k_grid,
                     const std::map<std::string, std::vector<RequestMetrics>>& per_method,
                     const std::string& reference) {
  EvalReport rep;
  rep.roster = roster;
  rep.k_grid.assign(k_grid.begin(), k_grid.end());
  rep.reference_method = reference;
  const auto ref_it = per_method.find(reference);
  const auto R = roster.size();

  auto series = [&](const std::vector<RequestMetrics>& ms, std::size_t ki) {
    std::vector<double> s;
    for (const auto& m : ms) s.push_back(m.union_recall[ki]);
    return s;
  };

  // Reference first, then the remaining methods in name order.
  std::vector<std::string> order;
  if (ref_it != per_method.end()) order.push_back(reference);
  for (const auto& [name, ms] : per_method)
    if (name != reference) order.push_back(name);

  for (const auto& name : order) {
    const auto& ms = per_method.at(name);
    rep.evaluated = std::max(rep.evaluated, ms.size());
    for (std::size_t ki = 0; ki < k_grid.size(); ++ki) {
      MethodRow row;
      row.method = name;
      row.k = k_grid[ki];
      row.n = ms.size();
      row.channel_recall.assign(R, 0.0);
      row.uniq.assign(R, 0.0);
      for (const auto& m : ms) {
        row.union_recall += m.union_recall[ki];
        for (std::size_t c = 0; c < R; ++c) {
          row.channel_recall[c] += m.channel_recall[ki][c];
          row.uniq[c] += m.uniq[ki][c];
        }
      }
      if (!ms.empty()) {
        const auto n = static_cast<double>(ms.size());
        row.union_recall /= n;
        for (std::size_t c = 0; c < R; ++c) {
          row.channel_recall[c] /= n;
          row.uniq[c] /= n;
        }
      }
      if (name != reference && ref_it != per_method.end() && ref_it->second.size() == ms.size()) {
        const auto t = paired_t_test(series(ref_it->second, ki), series(ms, ki));
        if (!t.degenerate) row.p_value = t.p;
      }
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

void write_metrics_csv(const EvalReport& report, const std::filesystem::path& path) {
  TextWriter w(path);
  std::string header = kMetricsHeaderPrefix;
  for (ChannelId c : report.roster) header += fmt::format(",recall_{}", channel_name(c));
  for (ChannelId c : report.roster) header += fmt::format(",uniq_{}", channel_name(c));
  header += ",n,p_value";
  w.line(header);
  for (const auto& r : report.rows) {
    std::string line = fmt::format("{},{},{:.6f}", r.method, r.k, r.union_recall);
    for (double v : r.channel_recall) line += fmt::format(",{:.6f}", v);
    for (double v : r.uniq) line += fmt::format(",{:.6f}", v);
    line += fmt::format(",{},{}", r.n, r.p_value ? fmt::format("{:.3g}", *r.p_value) : std::string("-"));
    w.line(line);
  }
  w.close();
}

std::string format_summary(const EvalReport& report) {
  std::string out;
  out += fmt::format("requests evaluated: {} (skipped: {} empty window, {} short history, {} no snapshot)\n",
                     report.evaluated, report.skipped_empty_window, report.skipped_short_history,
                     report.skipped_no_snapshot);
  auto table = [&](const std::string& title, auto&& value) {
    out += fmt::format("\n{}\n{:<10}", title, "method");
    for (int k : report.k_grid) out += fmt::format(" {:>9}", fmt::format("@{}", k));
    out += '\n';
    std::vector<std::string> methods;
    for (const auto& r : report.rows)
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    for (const auto& m : methods) {
      out += fmt::format("{:<10}", m);
      for (int k : report.k_grid) out += fmt::format(" {:>9.4f}", value(*report.row(m, k)));
      out += '\n';
    }
  };
  table("Union Recall", [](const MethodRow& r) { return r.union_recall; });
  for (std::size_t c = 0; c < report.roster.size(); ++c)
    table(fmt::format("Recall ({})", channel_name(report.roster[c])),
          [c](const MethodRow& r) { return r.channel_recall[c]; });
  for (std::size_t c = 0; c < report.roster.size(); ++c)
    table(fmt::format("Uniq ({})", channel_name(report.roster[c])), [c](const MethodRow& r) { return r.uniq[c]; });

  out += fmt::format("\nPaired t-test of {} against each method (union recall)\n", report.reference_method);
  for (const auto& r : report.rows) {
    if (r.method == report.reference_method) continue;
    out += fmt::format("{:<10} @{:<5} p = {}\n", r.method, r.k,
                       r.p_value ? fmt::format("{:.3g}", *r.p_value) : std::string("degenerate"));
  }
  return out;
}

}  // namespace capts
