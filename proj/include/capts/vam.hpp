#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "capts/channels.hpp"
#include "capts/corpus.hpp"

namespace capts {

struct ChannelLabelParams {
  double scale = 100.0;  // s_c, seconds per unit of intensity
  double cap = 6.0;      // M_c
  double gamma = 1.0;    // value-label threshold in [0, cap]
};

struct VamConfig {
  int window_size = 100;
  int stride = 20;
  int max_candidates = 50;  // most recent distinct eligible triggers per request
  std::array<ChannelLabelParams, kAllChannels.size()> channels{};
  double theta = 0.8;
  double epsilon = 1e-6;
  double target_positive_rate = 0.10;
  double effective_view_seconds = kDefaultEffectiveViewSeconds;

  const ChannelLabelParams& params(ChannelId c) const { return channels[static_cast<std::size_t>(c)]; }
  ChannelLabelParams& params(ChannelId c) { return channels[static_cast<std::size_t>(c)]; }
  void validate() const;
};

struct SupervisionRecord {
  RequestId request_id = 0;
  ItemId trigger = 0;
  ChannelId channel = ChannelId::cooccurrence;
  double raw_reward = 0.0;
  double intensity = 0.0;
  int value_label = 0;
  double uniqueness_ratio = 0.0;
  int uniqueness_label = 0;

  friend bool operator==(const SupervisionRecord&, const SupervisionRecord&) = default;
};

// Watch time per distinct future item; repeated views of an item are summed.
using AggregatedWindow = std::unordered_map<ItemId, double>;
AggregatedWindow aggregate_window(std::span<const WindowEntry> window);

// Sum of window watch time over distinct retrieved items present in the window.
double raw_reward(std::span<const ItemId> retrieved, const AggregatedWindow& window);
double raw_reward(std::span<const Neighbor> retrieved, const AggregatedWindow& window);

inline double intensity_label(double reward, double scale, double cap) {
  return std::min(cap, std::max(0.0, reward / scale));
}

inline int binary_label(double intensity, double gamma) { return intensity >= gamma ? 1 : 0; }

struct Uniqueness {
  double ratio = 0.0;
  int label = 0;
};

// Fraction of channel `c`'s distinct items that no other channel retrieved.
Uniqueness uniqueness(const std::vector<std::vector<ItemId>>& retrieved_per_channel, std::size_t c,
                      double epsilon, double theta);

struct SupervisionSet {
  std::vector<SupervisionRecord> records;  // sorted by (request, trigger, channel)
  std::vector<RequestInstance> requests;   // the instances that produced records
  std::size_t skipped = 0;                 // instances without a qualifying snapshot
};

// Candidate triggers used for a request: the most recent `max_candidates`
// distinct eligible items.
std::span<const ItemId> candidate_triggers(const RequestInstance& r, int max_candidates);

SupervisionSet build_supervision(std::span<const RequestInstance> requests, const SnapshotStore& store,
                                 const VamConfig& cfg, const std::vector<ChannelId>& roster,
                                 EpochSeconds delta = kDefaultReplayRollbackSeconds,
                                 ReplayAudit* audit = nullptr);

// Sets each channel's gamma so that about `target_positive_rate` of its
// records are positive, then relabels. Returns the chosen thresholds.
void calibrate_thresholds(std::vector<SupervisionRecord>& records, VamConfig& cfg);
void relabel(std::vector<SupervisionRecord>& records, const VamConfig& cfg);

std::array<double, kAllChannels.size()> positive_rates(std::span<const SupervisionRecord> records);

// ---- files --------------------------------------------------------------

inline constexpr const char* kSupervisionHeader = "capts-supervision v1";
inline constexpr const char* kRequestsHeader = "capts-requests v1";

void write_supervision(const SupervisionSet& set, const VamConfig& cfg,
                       const std::filesystem::path& records_path,
                       const std::filesystem::path& requests_path);

struct RequestRef {
  RequestId request_id = 0;
  UserId user = 0;
  EpochSeconds tau0 = 0;
  std::size_t prefix_len = 0;
};

struct SupervisionFile {
  VamConfig config;
  std::vector<SupervisionRecord> records;
  std::vector<RequestRef> requests;
  std::size_t skipped = 0;
};

SupervisionFile read_supervision(const std::filesystem::path& records_path,
                                 const std::filesystem::path& requests_path);

}  // namespace capts
