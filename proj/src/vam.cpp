#include "capts/vam.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "capts/config.hpp"
#include "capts/text_io.hpp"

namespace capts {

void VamConfig::validate() const {
  if (window_size < 1) throw ConfigError("vam.window_size must be >= 1");
  if (stride < 1) throw ConfigError("vam.stride must be >= 1");
  if (max_candidates < 1) throw ConfigError("vam.max_candidates must be >= 1");
  for (const auto& p : channels) {
    if (p.scale <= 0.0 || p.cap <= 0.0) throw ConfigError("vam scale and cap must be positive");
    if (p.gamma < 0.0 || p.gamma > p.cap) throw ConfigError("vam gamma must lie in [0, cap]");
  }
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("vam.theta must lie in (0, 1)");
  if (epsilon <= 0.0) throw ConfigError("vam.epsilon must be positive");
  if (!(target_positive_rate > 0.0 && target_positive_rate < 1.0))
    throw ConfigError("vam.target_positive_rate must lie in (0, 1)");
}

AggregatedWindow aggregate_window(std::span<const WindowEntry> window) {
  AggregatedWindow agg;
  agg.reserve(window.size());
  for (const auto& w : window) agg[w.item] += w.watch_seconds;
  return agg;
}

double raw_reward(std::span<const ItemId> retrieved, const AggregatedWindow& window) {
  double r = 0.0;
  std::vector<ItemId> counted;
  for (ItemId j : retrieved) {
    const auto it = window.find(j);
    if (it == window.end()) continue;
    if (std::find(counted.begin(), counted.end(), j) != counted.end()) continue;
    counted.push_back(j);
    r += it->second;
  }
  return r;
}

double raw_reward(std::span<const Neighbor> retrieved, const AggregatedWindow& window) {
  std::vector<ItemId> ids;
  ids.reserve(retrieved.size());
  for (const auto& nb : retrieved) ids.push_back(nb.item);
  return raw_reward(ids, window);
}

Uniqueness uniqueness(const std::vector<std::vector<ItemId>>& retrieved, std::size_t c,
                      double epsilon, double theta) {
  std::vector<std::vector<ItemId>> sorted(retrieved.size());
  for (std::size_t o = 0; o < retrieved.size(); ++o) {
    sorted[o] = retrieved[o];
    std::sort(sorted[o].begin(), sorted[o].end());
    sorted[o].erase(std::unique(sorted[o].begin(), sorted[o].end()), sorted[o].end());
  }
  const auto& own = sorted[c];
  std::size_t unique = 0;
  for (ItemId j : own) {
    bool elsewhere = false;
    for (std::size_t o = 0; o < sorted.size() && !elsewhere; ++o)
      elsewhere = o != c && std::binary_search(sorted[o].begin(), sorted[o].end(), j);
    if (!elsewhere) ++unique;
  }
  Uniqueness u;
  u.ratio = static_cast<double>(unique) / (static_cast<double>(own.size()) + epsilon);
  u.label = u.ratio > theta ? 1 : 0;
  return u;
}

std::span<const ItemId> candidate_triggers(const RequestInstance& r, int max_candidates) {
  const auto n = std::min(r.eligible_triggers.size(), static_cast<std::size_t>(std::max(0, max_candidates)));
  return std::span<const ItemId>(r.eligible_triggers).first(n);
}

SupervisionSet build_supervision(std::span<const RequestInstance> requests, const SnapshotStore& store,
                                 const VamConfig& cfg, const std::vector<ChannelId>& roster,
                                 EpochSeconds delta, ReplayAudit* audit) {
  cfg.validate();
  const auto n = static_cast<std::ptrdiff_t>(requests.size());
  std::vector<std::vector<SupervisionRecord>> per_request(requests.size());
  std::vector<std::uint8_t> usable(requests.size(), 0);

#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t ri = 0; ri < n; ++ri) {
    const auto& req = requests[static_cast<std::size_t>(ri)];
    std::vector<const IndexSnapshot*> snaps;
    for (ChannelId c : roster) snaps.push_back(store.select(c, req.tau0, delta));
    if (std::any_of(snaps.begin(), snaps.end(), [](const auto* s) { return s == nullptr; })) continue;
    usable[static_cast<std::size_t>(ri)] = 1;

    const auto window = aggregate_window(req.future_window);
    auto& out = per_request[static_cast<std::size_t>(ri)];
    std::vector<std::vector<ItemId>> retrieved(roster.size());
    for (ItemId t : candidate_triggers(req, cfg.max_candidates)) {
      for (std::size_t k = 0; k < roster.size(); ++k) {
        const auto list = replay_retrieve(store, roster[k], t, req.tau0, delta, audit);
        retrieved[k].clear();
        for (const auto& nb : list) retrieved[k].push_back(nb.item);
      }
      for (std::size_t k = 0; k < roster.size(); ++k) {
        const auto& p = cfg.params(roster[k]);
        SupervisionRecord rec;
        rec.request_id = req.request_id;
        rec.trigger = t;
        rec.channel = roster[k];
        rec.raw_reward = raw_reward(retrieved[k], window);
        rec.intensity = intensity_label(rec.raw_reward, p.scale, p.cap);
        rec.value_label = binary_label(rec.intensity, p.gamma);
        const auto u = uniqueness(retrieved, k, cfg.epsilon, cfg.theta);
        rec.uniqueness_ratio = u.ratio;
        rec.uniqueness_label = u.label;
        out.push_back(rec);
      }
    }
  }

  SupervisionSet set;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!usable[i]) {
      ++set.skipped;
      continue;
    }
    set.requests.push_back(requests[i]);
    set.records.insert(set.records.end(), per_request[i].begin(), per_request[i].end());
  }
  std::sort(set.records.begin(), set.records.end(), [](const auto& a, const auto& b) {
    if (a.request_id != b.request_id) return a.request_id < b.request_id;
    if (a.trigger != b.trigger) return a.trigger < b.trigger;
    return a.channel < b.channel;
  });
  std::sort(set.requests.begin(), set.requests.end(),
            [](const auto& a, const auto& b) { return a.request_id < b.request_id; });
  if (set.skipped > 0) spdlog::info("supervision: {} request instances skipped (no snapshot)", set.skipped);
  return set;
}

void calibrate_thresholds(std::vector<SupervisionRecord>& records, VamConfig& cfg) {
  for (ChannelId c : kAllChannels) {
    std::vector<double> values;
    for (const auto& r : records)
      if (r.channel == c) values.push_back(r.intensity);
    if (values.empty()) continue;
    auto& p = cfg.params(c);
    std::sort(values.begin(), values.end(), std::greater<>());
    const auto m = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.target_positive_rate * static_cast<double>(values.size()))));
    double gamma = values[std::min(m, values.size()) - 1];
    if (gamma <= 0.0) {
      // Fewer positives than the target: every nonzero intensity is positive.
      double smallest_positive = p.cap;
      for (double v : values)
        if (v > 0.0) smallest_positive = std::min(smallest_positive, v);
      gamma = smallest_positive;
    }
    p.gamma = std::clamp(gamma, 0.0, p.cap);
  }
  relabel(records, cfg);
}

void relabel(std::vector<SupervisionRecord>& records, const VamConfig& cfg) {
  for (auto& r : records) {
    r.value_label = binary_label(r.intensity, cfg.params(r.channel).gamma);
    r.uniqueness_label = r.uniqueness_ratio > cfg.theta ? 1 : 0;
  }
}

std::array<double, kAllChannels.size()> positive_rates(std::span<const SupervisionRecord> records) {
  std::array<double, kAllChannels.size()> pos{}, total{};
  for (const auto& r : records) {
    const auto c = static_cast<std::size_t>(r.channel);
    total[c] += 1.0;
    pos[c] += r.value_label;
  }
  for (std::size_t c = 0; c < pos.size(); ++c) pos[c] = total[c] > 0.0 ? pos[c] / total[c] : 0.0;
  return pos;
}

// ---- files --------------------------------------------------------------

void write_supervision(const SupervisionSet& set, const VamConfig& cfg,
                       const std::filesystem::path& records_path,
                       const std::filesystem::path& requests_path) {
  {
    TextWriter w(records_path);
    const nlohmann::json header = {{"config", cfg}, {"skipped", set.skipped}};
    w.line(fmt::format("{} {}", kSupervisionHeader, header.dump()));
    for (const auto& r : set.records) {
      w.line(fmt::format("{},{},{},{},{},{},{},{}", r.request_id, r.trigger, channel_name(r.channel),
                         r.raw_reward, r.intensity, r.value_label, r.uniqueness_ratio, r.uniqueness_label));
    }
    w.close();
  }
  TextWriter w(requests_path);
  w.line(kRequestsHeader);
  for (const auto& r : set.requests)
    w.line(fmt::format("{},{},{},{}", r.request_id, r.user, r.tau0, r.prefix_len));
  w.close();
}

SupervisionFile read_supervision(const std::filesystem::path& records_path,
                                 const std::filesystem::path& requests_path) {
  SupervisionFile out;
  {
    TextReader r(records_path);
    std::string line;
    if (!r.next(line) || !line.starts_with(kSupervisionHeader))
      throw IoError(fmt::format("{}: missing supervision header", records_path.string()));
    const auto header = nlohmann::json::parse(line.substr(std::string_view(kSupervisionHeader).size()));
    out.config = header.at("config").get<VamConfig>();
    out.skipped = header.value("skipped", std::size_t{0});
    while (r.next(line)) {
      if (line.empty()) continue;
      const auto f = split_fields(line, ',');
      if (f.size() != 8) throw IoError(fmt::format("{}:{}: expected 8 fields", records_path.string(), r.line_no()));
      SupervisionRecord rec;
      rec.request_id = parse_number<RequestId>(f[0]);
      rec.trigger = parse_number<ItemId>(f[1]);
      const auto c = parse_channel(f[2]);
      if (!c) throw IoError(fmt::format("{}:{}: unknown channel", records_path.string(), r.line_no()));
      rec.channel = *c;
      rec.raw_reward = parse_number<double>(f[3]);
      rec.intensity = parse_number<double>(f[4]);
      rec.value_label = parse_number<int>(f[5]);
      rec.uniqueness_ratio = parse_number<double>(f[6]);
      rec.uniqueness_label = parse_number<int>(f[7]);
      out.records.push_back(rec);
    }
  }
  TextReader r(requests_path);
  std::string line;
  if (!r.next(line) || line != kRequestsHeader)
    throw IoError(fmt::format("{}: missing requests header", requests_path.string()));
  while (r.next(line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line, ',');
    if (f.size() != 4) throw IoError(fmt::format("{}:{}: expected 4 fields", requests_path.string(), r.line_no()));
    out.requests.push_back({parse_number<RequestId>(f[0]), parse_number<UserId>(f[1]),
                            parse_number<EpochSeconds>(f[2]), parse_number<std::size_t>(f[3])});
  }
  return out;
}

}  // namespace capts
