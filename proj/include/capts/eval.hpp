#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capts/channels.hpp"
#include "capts/routing.hpp"

namespace capts {

struct EvalConfig {
  std::vector<int> k_grid = {20, 50, 100, 200};
  int test_views = 100;  // held-out effective views per user
  double epsilon = 1e-6;
  std::vector<std::string> methods = {"capts", "recent", "tagtop", "ltv", "nic"};

  void validate() const;
};

// Channel top-K from routed triggers: per-trigger replay lists interleaved by
// rank (rank 1 of every trigger first), first occurrence kept, cut at K.
std::vector<ItemId> channel_topk(const SnapshotStore& store, ChannelId c, std::span<const ItemId> triggers,
                                 EpochSeconds tau0, int k, EpochSeconds delta = kDefaultReplayRollbackSeconds,
                                 ReplayAudit* audit = nullptr);

// Same rule over explicit per-trigger lists.
std::vector<ItemId> interleave_topk(std::span<const std::span<const Neighbor>> lists, int k);

// |W ∩ retrieved| / |W| over unique window items; nullopt for an empty window.
std::optional<double> recall(std::span<const ItemId> retrieved, std::span<const ItemId> window_items);
std::optional<double> recall_union(const std::vector<std::vector<ItemId>>& per_channel,
                                   std::span<const ItemId> window_items);

// Uniq_c = |items of c in no other channel| / (|distinct items of c| + eps).
std::vector<double> uniq_at_k(const std::vector<std::vector<ItemId>>& per_channel, double epsilon);

struct PairedTest {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of (a - b)
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // fewer than 2 pairs or zero variance of differences
};

// Two-sided paired t-test on a - b.
PairedTest paired_t_test(std::span<const double> a, std::span<const double> b);

// One request's metrics for one method, per K in the grid.
struct RequestMetrics {
  RequestId request_id = 0;
  std::vector<double> union_recall;               // per K
  std::vector<std::vector<double>> channel_recall;  // per K, per roster channel
  std::vector<std::vector<double>> uniq;            // per K, per roster channel
};

struct MethodRow {
  std::string method;
  int k = 0;
  double union_recall = 0.0;
  std::vector<double> channel_recall;
  std::vector<double> uniq;
  std::size_t n = 0;
  std::optional<double> p_value;  // paired test against the reference method
};

struct EvalReport {
  std::vector<ChannelId> roster;
  std::vector<int> k_grid;
  std::vector<MethodRow> rows;
  std::size_t evaluated = 0;
  std::size_t skipped_empty_window = 0;
  std::size_t skipped_short_history = 0;
  std::size_t skipped_no_snapshot = 0;
  std::string reference_method;

  const MethodRow* row(std::string_view method, int k) const;
};

// Metrics of one assignment on one request (window must be non-empty).
RequestMetrics score_assignment(const RoutingAssignment& a, const SnapshotStore& store, const RequestInstance& req,
                                std::span<const int> k_grid, double epsilon,
                                EpochSeconds delta = kDefaultReplayRollbackSeconds, ReplayAudit* audit = nullptr);

// Means per (method, K) plus paired tests of `reference` against every other method.
EvalReport summarize(const std::vector<ChannelId>& roster, std::span<const int> k_grid,
                     const std::map<std::string, std::vector<RequestMetrics>>& per_method,
                     const std::string& reference);

inline constexpr const char* kMetricsHeaderPrefix = "method,k,union_recall";

void write_metrics_csv(const EvalReport& report, const std::filesystem::path& path);
std::string format_summary(const EvalReport& report);

}  // namespace capts
