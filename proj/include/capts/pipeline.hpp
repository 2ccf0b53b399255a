#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "capts/config.hpp"

namespace capts {

// The full log plus the held-out split used for evaluation. Training sees
// each user's history only up to that user's evaluation anchor.
struct PreparedData {
  Corpus corpus;
  Corpus train_corpus;
  std::vector<RequestInstance> eval_requests;  // sorted by request id
  std::size_t skipped_short_history = 0;
  std::size_t skipped_empty_window = 0;
  std::size_t skipped_no_snapshot = 0;

  // Copies the skip counters into a report.
  void annotate(EvalReport& report) const;
};

PreparedData prepare_data(Corpus corpus, const EvalConfig& eval, double threshold);

// Drops evaluation requests for which some channel has no snapshot at or
// before tau0 - delta.
void drop_unreplayable(PreparedData& data, const SnapshotStore& store, const std::vector<ChannelId>& roster,
                       EpochSeconds delta);

// Request instances over the training histories, labelled by replay.
// Thresholds are calibrated in `vam` when `calibrate` is set.
SupervisionSet build_training_supervision(const PreparedData& data, const SnapshotStore& store, VamConfig& vam,
                                          const std::vector<ChannelId>& roster, EpochSeconds delta,
                                          bool calibrate, ReplayAudit* audit = nullptr);

std::vector<RequestRef> request_refs(const SupervisionSet& set);

struct Variant {
  std::string name = "capts";
  double lambda = 0.1;
  double mu = 0.1;
  double eta = 0.2;
  bool use_calibrator = true;
};

Variant full_variant(const RunConfig& cfg);
// Full model, diversity off (mu = eta = 0), calibrator bypassed (v^ = v~, lambda = 0).
std::vector<Variant> ablation_variants(const RunConfig& cfg);

CatrModel train_variant(const PreparedData& data, std::span<const TrainingRequest> training, const RunConfig& cfg,
                        const Variant& v, std::uint64_t seed, TrainReport* report = nullptr);

struct AssignmentRecord {
  RequestId request_id = 0;
  std::string method;
  RoutingAssignment assignment;
};

// Evaluates `methods` on the held-out requests. "capts" requires a model; the
// routing eta comes from `eta`.
std::map<std::string, std::vector<RequestMetrics>> evaluate_methods(
    const PreparedData& data, const SnapshotStore& store, const CatrModel* model, const RunConfig& cfg,
    const std::vector<std::string>& methods, double eta, ReplayAudit* audit = nullptr,
    std::vector<AssignmentRecord>* assignments = nullptr);

RoutingAssignment capts_assignment(const CatrModel& model, const UserHistory& h, const RequestInstance& req,
                                   const RunConfig& cfg, double eta);

void write_assignments(std::span<const AssignmentRecord> records, const std::filesystem::path& path);

// Rebuilds every consulted snapshot from the log truncated at its as_of and
// compares serialized bytes.
struct LeakageReport {
  std::size_t checked = 0;
  std::size_t mismatched = 0;
  std::uint64_t replays = 0;
  std::uint64_t violations = 0;
  bool pass() const { return mismatched == 0 && violations == 0; }
};
LeakageReport audit_leakage(const Corpus& corpus, const SnapshotStore& store, const ReplayAudit& audit,
                            const SnapshotConfig& cfg);

// Snapshot settings with the embedding seed derived from `seed`.
SnapshotConfig snapshot_config_for(const RunConfig& cfg, std::uint64_t seed);

// ---- end-to-end (in memory) --------------------------------------------

struct VariantResult {
  Variant variant;
  TrainReport train;
  std::map<std::string, std::vector<RequestMetrics>> metrics;
  EvalReport report;
};

struct SeedResult {
  std::uint64_t seed = 0;
  VamConfig calibrated;
  std::size_t supervision_records = 0;
  std::size_t supervision_requests = 0;
  std::size_t supervision_skipped = 0;
  std::vector<VariantResult> variants;
  std::optional<LeakageReport> leakage;
  std::map<std::string, double> seconds;  // per stage
};

struct SeedOptions {
  std::vector<Variant> variants;
  bool baselines = true;  // evaluate the rule-based methods alongside the first variant
  bool leakage_audit = false;
};

// generate -> indexes -> supervision -> train each variant -> evaluate.
SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const SeedOptions& opts);

struct SweepPoint {
  int window_size = 0;
  EvalReport report;
  double seconds = 0.0;
};

// Rebuilds labels per window size and retrains; evaluation is unchanged.
std::vector<SweepPoint> window_sweep(const RunConfig& cfg, std::uint64_t seed, const std::vector<int>& windows);
std::vector<SweepPoint> window_sweep(const RunConfig& cfg, const PreparedData& data, const SnapshotStore& store,
                                     std::uint64_t seed, const std::vector<int>& windows);

}  // namespace capts
