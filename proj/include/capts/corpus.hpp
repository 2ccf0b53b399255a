#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "capts/types.hpp"

namespace capts {

struct Item {
  ItemId id = 0;
  std::uint32_t author_id = 0;
  std::uint32_t tag_id = 0;
  std::vector<float> content;  // unit-normalized
  double duration_seconds = 0.0;
  EpochSeconds created_at = 0;
};

enum Feedback : std::uint8_t {
  kLike = 1u << 0,
  kFollow = 1u << 1,
  kComment = 1u << 2,
  kShare = 1u << 3,
};

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  EpochSeconds ts = 0;
  double watch_seconds = 0.0;
  std::uint8_t feedback = 0;
};

struct UserHistory {
  UserId user = 0;
  std::vector<Interaction> events;  // strictly increasing ts
};

// Item catalog indexed by item id; ids are dense in [0, size).
struct Catalog {
  int content_dim = 0;
  std::vector<Item> items;

  const Item& at(ItemId id) const { return items.at(id); }
  std::size_t size() const { return items.size(); }
};

struct Corpus {
  Catalog catalog;
  std::vector<UserHistory> users;  // sorted by user id

  std::size_t interaction_count() const;
  EpochSeconds first_ts() const;
  EpochSeconds last_ts() const;
};

inline bool is_effective_view(const Interaction& x,
                              double threshold = kDefaultEffectiveViewSeconds) {
  return x.watch_seconds >= threshold;
}

std::vector<Interaction> effective_views(std::span<const Interaction> events,
                                         double threshold = kDefaultEffectiveViewSeconds);

struct WindowEntry {
  ItemId item = 0;
  EpochSeconds ts = 0;
  double watch_seconds = 0.0;
};

struct RequestInstance {
  RequestId request_id = 0;
  UserId user = 0;
  EpochSeconds tau0 = 0;
  // Number of history events strictly before tau0; history[0, prefix_len) is
  // what the request may see.
  std::size_t prefix_len = 0;
  // Distinct items from events before tau0, most recent occurrence first.
  std::vector<ItemId> eligible_triggers;
  std::vector<WindowEntry> future_window;
};

RequestId make_request_id(UserId user, std::uint32_t ordinal);

// One instance per stride-th effective view (ordinals 0, stride, 2*stride...).
std::vector<RequestInstance> build_request_instances(
    const UserHistory& history, int window_size, int stride,
    double threshold = kDefaultEffectiveViewSeconds);

// Train/test split: the last `test_views` effective views form the test
// window; the anchor is the effective view right before them.
struct HistorySplit {
  std::size_t anchor_index = 0;     // index into events
  std::uint32_t anchor_ordinal = 0; // effective-view ordinal of the anchor
};
std::optional<HistorySplit> split_for_test(const UserHistory& history, int test_views,
                                           double threshold = kDefaultEffectiveViewSeconds);

// Single evaluation instance anchored at the split point.
std::optional<RequestInstance> build_eval_instance(
    const UserHistory& history, int test_views,
    double threshold = kDefaultEffectiveViewSeconds);

// Interactions with ts <= as_of; items created after as_of are replaced by
// placeholders (zero content, created_at = max) so builders cannot see them.
Corpus truncate_corpus(const Corpus& corpus, EpochSeconds as_of);

// Orders a history by (ts, item_id). Returns the number of timestamp ties
// encountered; ties are broken by item id.
std::size_t normalize_history(UserHistory& history);

// Invariant checks used by tests and the CLI (throws ConfigError).
void validate_corpus(const Corpus& corpus, double norm_tolerance = 1e-6);

// ---- files --------------------------------------------------------------

inline constexpr const char* kEventLogHeader = "capts-events v1";
inline constexpr const char* kCatalogHeader = "capts-catalog v1";

void write_event_log(const Corpus& corpus, const std::filesystem::path& path);
void write_catalog(const Catalog& catalog, const std::filesystem::path& path);
// Reads both files. Ties within a user are broken by item id; the count of
// tie fixes is returned through `ties_broken` when provided.
Corpus read_corpus(const std::filesystem::path& events, const std::filesystem::path& catalog,
                   std::size_t* ties_broken = nullptr);

}  // namespace capts
