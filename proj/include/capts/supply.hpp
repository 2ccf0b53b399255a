#pragma once

#include <atomic>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "capts/catr.hpp"
#include "capts/routing.hpp"

namespace capts {

struct SupplyConfig {
  int long_history = 2000;  // nearline candidate horizon
  int recent_n = 100;       // online candidate horizon
  int top_m = 50;           // cached triggers per user
  EpochSeconds ttl_seconds = 2 * 86400;

  void validate() const;
};

inline constexpr EpochSeconds kNoExpiry = std::numeric_limits<EpochSeconds>::max();

struct ScoredTrigger {
  ItemId item = 0;
  std::vector<double> scores;  // routing score per roster channel
  double max_score() const;
  friend bool operator==(const ScoredTrigger&, const ScoredTrigger&) = default;
};

struct CacheEntry {
  UserId user = 0;
  EpochSeconds refreshed_at = 0;
  EpochSeconds ttl_seconds = 0;
  std::string checkpoint;
  std::vector<ScoredTrigger> triggers;  // descending max score, ties by item id

  bool valid_at(EpochSeconds now) const {
    return ttl_seconds == kNoExpiry || now - refreshed_at <= ttl_seconds;
  }
  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

// Per-user trigger cache. Readers get an immutable snapshot of an entry;
// put() swaps the whole entry.
class TriggerCache {
 public:
  void put(CacheEntry entry);
  // Valid entry for `user` at `now` whose checkpoint matches, else nullptr.
  std::shared_ptr<const CacheEntry> get(UserId user, EpochSeconds now, std::string_view checkpoint) const;
  std::size_t size() const;
  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }

  void save(const std::filesystem::path& path) const;
  // Replaces the current contents with the file's entries.
  void load(const std::filesystem::path& path);

 private:
  mutable std::mutex mu_;
  std::map<UserId, std::shared_ptr<const CacheEntry>> entries_;
  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
};

// Routing scores for the `limit` most recent distinct items before prefix_len.
std::vector<ScoredTrigger> score_candidates(const CatrModel& model, const UserHistory& h, std::size_t prefix_len,
                                            EpochSeconds tau0, int limit, double eta,
                                            double threshold = kDefaultEffectiveViewSeconds);

// Nearline batch: scores up to long_history candidates and keeps the top_m.
CacheEntry nearline_refresh(const CatrModel& model, const std::string& checkpoint, const UserHistory& h,
                            std::size_t prefix_len, EpochSeconds now, const SupplyConfig& cfg, double eta,
                            double threshold = kDefaultEffectiveViewSeconds);

// Union by item id; a shared item keeps the larger score per channel.
std::vector<ScoredTrigger> merge_supply(std::vector<ScoredTrigger> online, std::span<const ScoredTrigger> cached);

struct SupplyResult {
  std::vector<ScoredTrigger> triggers;
  bool cache_hit = false;
};

SupplyResult online_supply(const CatrModel& model, const std::string& checkpoint, const UserHistory& h,
                           std::size_t prefix_len, EpochSeconds tau0, const TriggerCache& cache,
                           const SupplyConfig& cfg, double eta, double threshold = kDefaultEffectiveViewSeconds);

RoutingAssignment route_supply(std::span<const ScoredTrigger> triggers, const std::vector<ChannelId>& roster,
                               const RoutingConfig& cfg);

inline constexpr const char* kCacheHeader = "capts-cache v1";

}  // namespace capts
