#include "capts/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capts/text_io.hpp"

namespace capts {

std::size_t Corpus::interaction_count() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.events.size();
  return n;
}

EpochSeconds Corpus::first_ts() const {
  EpochSeconds t = std::numeric_limits<EpochSeconds>::max();
  for (const auto& u : users)
    if (!u.events.empty()) t = std::min(t, u.events.front().ts);
  return t;
}

EpochSeconds Corpus::last_ts() const {
  EpochSeconds t = std::numeric_limits<EpochSeconds>::min();
  for (const auto& u : users)
    if (!u.events.empty()) t = std::max(t, u.events.back().ts);
  return t;
}

std::vector<Interaction> effective_views(std::span<const Interaction> events, double threshold) {
  std::vector<Interaction> out;
  for (const auto& e : events)
    if (is_effective_view(e, threshold)) out.push_back(e);
  return out;
}

RequestId make_request_id(UserId user, std::uint32_t ordinal) {
  return (static_cast<RequestId>(user) << 32) | ordinal;
}

namespace {

std::vector<std::size_t> effective_positions(const UserHistory& h, double threshold) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < h.events.size(); ++i)
    if (is_effective_view(h.events[i], threshold)) pos.push_back(i);
  return pos;
}

RequestInstance make_instance(const UserHistory& h, const std::vector<std::size_t>& eff,
                              std::size_t ordinal, int window_size, RequestId id) {
  RequestInstance r;
  const std::size_t anchor = eff[ordinal];
  r.request_id = id;
  r.user = h.user;
  r.tau0 = h.events[anchor].ts;
  std::size_t prefix = anchor;
  while (prefix > 0 && h.events[prefix - 1].ts >= r.tau0) --prefix;  // ingested ties
  r.prefix_len = prefix;
  std::unordered_set<ItemId> seen;
  for (std::size_t i = prefix; i-- > 0;) {
    if (seen.insert(h.events[i].item).second) r.eligible_triggers.push_back(h.events[i].item);
  }
  const std::size_t end = std::min(eff.size(), ordinal + 1 + static_cast<std::size_t>(window_size));
  for (std::size_t k = ordinal + 1; k < end; ++k) {
    const auto& e = h.events[eff[k]];
    if (e.ts <= r.tau0) continue;
    r.future_window.push_back({e.item, e.ts, e.watch_seconds});
  }
  return r;
}

}  // namespace

std::vector<RequestInstance> build_request_instances(const UserHistory& history, int window_size,
                                                     int stride, double threshold) {
  if (window_size < 1) throw ConfigError("window size must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  std::vector<RequestInstance> out;
  const auto eff = effective_positions(history, threshold);
  for (std::size_t k = 0; k < eff.size(); k += static_cast<std::size_t>(stride)) {
    out.push_back(make_instance(history, eff, k, window_size,
                                make_request_id(history.user, static_cast<std::uint32_t>(k))));
  }
  return out;
}

std::optional<HistorySplit> split_for_test(const UserHistory& history, int test_views,
                                           double threshold) {
  const auto eff = effective_positions(history, threshold);
  if (test_views < 1 || eff.size() < static_cast<std::size_t>(test_views) + 1) return std::nullopt;
  const std::size_t ordinal = eff.size() - static_cast<std::size_t>(test_views) - 1;
  return HistorySplit{eff[ordinal], static_cast<std::uint32_t>(ordinal)};
}

std::optional<RequestInstance> build_eval_instance(const UserHistory& history, int test_views,
                                                   double threshold) {
  const auto split = split_for_test(history, test_views, threshold);
  if (!split) return std::nullopt;
  const auto eff = effective_positions(history, threshold);
  // High bit keeps evaluation ids disjoint from training ids.
  return make_instance(history, eff, split->anchor_ordinal, test_views,
                       make_request_id(history.user, split->anchor_ordinal | 0x80000000u));
}

Corpus truncate_corpus(const Corpus& corpus, EpochSeconds as_of) {
  Corpus out;
  out.catalog.content_dim = corpus.catalog.content_dim;
  out.catalog.items.reserve(corpus.catalog.size());
  for (const auto& it : corpus.catalog.items) {
    if (it.created_at <= as_of) {
      out.catalog.items.push_back(it);
    } else {
      Item placeholder;
      placeholder.id = it.id;
      placeholder.content.assign(it.content.size(), 0.0f);
      placeholder.created_at = std::numeric_limits<EpochSeconds>::max();
      out.catalog.items.push_back(std::move(placeholder));
    }
  }
  out.users.reserve(corpus.users.size());
  for (const auto& u : corpus.users) {
    UserHistory h{u.user, {}};
    for (const auto& e : u.events) {
      if (e.ts > as_of) break;
      h.events.push_back(e);
    }
    out.users.push_back(std::move(h));
  }
  return out;
}

std::size_t normalize_history(UserHistory& history) {
  auto& ev = history.events;
  std::stable_sort(ev.begin(), ev.end(), [](const Interaction& a, const Interaction& b) {
    return a.ts != b.ts ? a.ts < b.ts : a.item < b.item;
  });
  std::size_t ties = 0;
  for (std::size_t i = 1; i < ev.size(); ++i)
    if (ev[i].ts == ev[i - 1].ts) ++ties;
  return ties;
}

void validate_corpus(const Corpus& corpus, double norm_tolerance) {
  const auto& cat = corpus.catalog;
  for (std::size_t i = 0; i < cat.size(); ++i) {
    const auto& it = cat.items[i];
    if (it.id != i) throw ConfigError(fmt::format("catalog ids must be dense; slot {} holds {}", i, it.id));
    if (static_cast<int>(it.content.size()) != cat.content_dim)
      throw ConfigError(fmt::format("item {} has content dim {}", it.id, it.content.size()));
    double n2 = 0.0;
    for (float x : it.content) n2 += static_cast<double>(x) * x;
    if (std::abs(std::sqrt(n2) - 1.0) > norm_tolerance)
      throw ConfigError(fmt::format("item {} content vector is not unit norm", it.id));
  }
  for (const auto& u : corpus.users) {
    for (std::size_t k = 0; k < u.events.size(); ++k) {
      const auto& e = u.events[k];
      if (e.user != u.user) throw ConfigError("interaction user id does not match its history");
      if (e.watch_seconds < 0.0) throw ConfigError("negative watch time");
      if (e.item >= cat.size()) throw ConfigError(fmt::format("unknown item {}", e.item));
      if (k > 0 && e.ts < u.events[k - 1].ts)
        throw ConfigError(fmt::format("user {} history is not time ordered", u.user));
      if (cat.items[e.item].created_at >= e.ts)
        throw ConfigError(fmt::format("item {} consumed before creation", e.item));
    }
  }
}

// ---- files --------------------------------------------------------------

void write_event_log(const Corpus& corpus, const std::filesystem::path& path) {
  TextWriter w(path);
  w.line(kEventLogHeader);
  for (const auto& u : corpus.users) {
    for (const auto& e : u.events) {
      w.line(fmt::format("{},{},{},{},{},{},{},{}", e.user, e.item, e.ts, e.watch_seconds,
                         (e.feedback & kLike) ? 1 : 0, (e.feedback & kFollow) ? 1 : 0,
                         (e.feedback & kComment) ? 1 : 0, (e.feedback & kShare) ? 1 : 0));
    }
  }
  w.close();
}

void write_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  TextWriter w(path);
  w.line(fmt::format("{} dim={}", kCatalogHeader, catalog.content_dim));
  for (const auto& it : catalog.items) {
    w.line(fmt::format("{},{},{},{},{},{}", it.id, it.author_id, it.tag_id, it.duration_seconds,
                       it.created_at, fmt::join(it.content, ",")));
  }
  w.close();
}

Corpus read_corpus(const std::filesystem::path& events_path,
                   const std::filesystem::path& catalog_path, std::size_t* ties_broken) {
  Corpus corpus;
  {
    TextReader r(catalog_path);
    std::string line;
    if (!r.next(line) || !line.starts_with(kCatalogHeader))
      throw IoError(fmt::format("{}: missing '{}' header", catalog_path.string(), kCatalogHeader));
    const auto dim_pos = line.find("dim=");
    if (dim_pos == std::string::npos) throw IoError("catalog header lacks dim=");
    corpus.catalog.content_dim = parse_number<int>(std::string_view(line).substr(dim_pos + 4));
    while (r.next(line)) {
      if (line.empty()) continue;
      const auto f = split_fields(line, ',');
      if (f.size() != 5 + static_cast<std::size_t>(corpus.catalog.content_dim))
        throw IoError(fmt::format("{}:{}: bad field count", catalog_path.string(), r.line_no()));
      Item it;
      it.id = parse_number<ItemId>(f[0]);
      it.author_id = parse_number<std::uint32_t>(f[1]);
      it.tag_id = parse_number<std::uint32_t>(f[2]);
      it.duration_seconds = parse_number<double>(f[3]);
      it.created_at = parse_number<EpochSeconds>(f[4]);
      it.content.reserve(corpus.catalog.content_dim);
      for (std::size_t k = 5; k < f.size(); ++k) it.content.push_back(parse_number<float>(f[k]));
      corpus.catalog.items.push_back(std::move(it));
    }
    std::sort(corpus.catalog.items.begin(), corpus.catalog.items.end(),
              [](const Item& a, const Item& b) { return a.id < b.id; });
  }
  std::map<UserId, UserHistory> by_user;
  {
    TextReader r(events_path);
    std::string line;
    if (!r.next(line) || line != kEventLogHeader)
      throw IoError(fmt::format("{}: missing '{}' header", events_path.string(), kEventLogHeader));
    while (r.next(line)) {
      if (line.empty()) continue;
      const auto f = split_fields(line, ',');
      if (f.size() != 8)
        throw IoError(fmt::format("{}:{}: expected 8 fields", events_path.string(), r.line_no()));
      Interaction e;
      e.user = parse_number<UserId>(f[0]);
      e.item = parse_number<ItemId>(f[1]);
      e.ts = parse_number<EpochSeconds>(f[2]);
      e.watch_seconds = parse_number<double>(f[3]);
      const std::uint8_t bits[4] = {kLike, kFollow, kComment, kShare};
      for (int k = 0; k < 4; ++k)
        if (parse_number<int>(f[4 + k]) != 0) e.feedback |= bits[k];
      auto& h = by_user[e.user];
      h.user = e.user;
      h.events.push_back(e);
    }
  }
  std::size_t ties = 0;
  for (auto& [uid, h] : by_user) {
    const std::size_t t = normalize_history(h);
    if (t > 0) spdlog::warn("user {}: {} timestamp ties broken by item id", uid, t);
    ties += t;
    corpus.users.push_back(std::move(h));
  }
  if (ties_broken) *ties_broken = ties;
  return corpus;
}

}  // namespace capts
