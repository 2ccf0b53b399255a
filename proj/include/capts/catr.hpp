#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capts/corpus.hpp"

namespace capts {

struct ModelConfig {
  int d = 32;             // item / user / bucket embedding width
  int d_a = 32;           // attention width
  int d_h = 64;           // head hidden width
  int seq_len = 50;       // L, most recent effective views fed to attention
  int n_items = 0;
  int n_users = 0;
  int time_buckets = 8;
  int watch_buckets = 6;
  int tod_buckets = 4;
  double beta = 0.1;
  bool use_calibrator = true;
  std::vector<ChannelId> roster{kAllChannels.begin(), kAllChannels.end()};

  void validate() const;
};

// Logarithmic age buckets: <1m, <10m, <1h, <6h, <1d, <3d, <7d, >=7d.
int time_bucket(EpochSeconds age);
// Watch-time buckets: <7s, <15s, <30s, <60s, <120s, >=120s.
int watch_bucket(double watch_seconds);
// Quarter of the day (UTC) of a timestamp.
int tod_bucket(EpochSeconds ts);

struct SequenceStep {
  ItemId item = 0;
  int time_bucket = 0;
  int watch_bucket = 0;
};

struct RequestFeatures {
  UserId user = 0;
  int tod_bucket = 0;
  std::vector<SequenceStep> sequence;  // most recent first, at most L
  std::vector<SequenceStep> triggers;  // one per candidate, most recent occurrence
};

// Features for candidate `triggers` given history[0, prefix_len).
RequestFeatures build_features(const UserHistory& history, std::size_t prefix_len, EpochSeconds tau0,
                               std::span<const ItemId> triggers, int seq_len,
                               double threshold = kDefaultEffectiveViewSeconds);

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class CatrModel {
 public:
  CatrModel() = default;
  // Random initialization (embeddings N(0, 0.1), weights N(0, 1/fan_in), zero biases).
  CatrModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::string_view name) const;
  std::span<double> params() { return values_; }
  std::span<const double> params() const { return values_; }
  std::span<double> view(const ParamBlock& b) { return std::span<double>(values_).subspan(b.offset, b.size()); }
  std::span<const double> view(const ParamBlock& b) const {
    return std::span<const double>(values_).subspan(b.offset, b.size());
  }
  std::size_t parameter_count() const { return values_.size(); }
  bool all_finite() const;
  // Rounds every parameter through float32, the checkpoint precision.
  void round_to_float();

  void set_use_calibrator(bool on) { cfg_.use_calibrator = on; }

  // Item ids map to row id + 1; row 0 is the out-of-vocabulary row.
  int item_row(ItemId id) const { return id < static_cast<ItemId>(cfg_.n_items) ? static_cast<int>(id) + 1 : 0; }
  int user_row(UserId id) const { return id < static_cast<UserId>(cfg_.n_users) ? static_cast<int>(id) + 1 : 0; }

 private:
  void layout();

  ModelConfig cfg_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> values_;
};

struct ChannelPrediction {
  double base = 0.0;        // v~
  double calibrated = 0.0;  // v^
  double uniqueness = 0.0;  // rho^
};

struct TriggerPrediction {
  ItemId item = 0;
  std::vector<ChannelPrediction> channels;  // roster order
};

std::vector<TriggerPrediction> predict(const CatrModel& model, const RequestFeatures& features);

// Scalar forms of the heads, exposed for property tests.
double sigmoid(double x);
inline double calibrate(double base, double q, double beta) {
  const double v = base + beta * std::tanh(q);
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

// ---- training objective -------------------------------------------------

struct ChannelTarget {
  double value_label = 0.0;
  double intensity = 0.0;
  double cap = 1.0;
  double uniqueness_label = 0.0;
};

struct TrainingRequest {
  RequestId request_id = 0;
  RequestFeatures features;
  std::vector<ChannelTarget> targets;  // trigger-major, roster order within a trigger
};

struct LossWeights {
  double lambda = 0.1;
  double mu = 0.1;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Per-example means (normalized by the number of (request, trigger) pairs).
struct LossBreakdown {
  double total = 0.0;
  double value = 0.0;        // L_val
  double calibration = 0.0;  // L_cal, unweighted
  double diversity = 0.0;    // L_div, unweighted
  double weighted_calibration = 0.0;
  double weighted_diversity = 0.0;
  std::size_t examples = 0;
  std::size_t clamps = 0;
};

// Evaluates the objective over `batch`; when `grad` is non-null the gradient
// of the total is accumulated into it (same layout as model.params()).
LossBreakdown batch_loss(const CatrModel& model, std::span<const TrainingRequest> batch,
                         const LossWeights& weights, std::vector<double>* grad = nullptr);

// ---- gradient check -----------------------------------------------------

struct BlockCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradientCheckReport {
  std::vector<BlockCheck> blocks;
  bool pass = true;
};

// Optional hook applied to the analytic gradient before comparison.
using GradientHook = std::function<void(const CatrModel&, std::vector<double>&)>;

inline constexpr double kGradientCheckFloor = 1e-5;

// Central differences on every parameter. Relative error is
// |a - n| / max(|a|, |n|, kGradientCheckFloor).
GradientCheckReport gradient_check(CatrModel& model, std::span<const TrainingRequest> batch,
                                   const LossWeights& weights, double h = 1e-4, double tol = 1e-4,
                                   const GradientHook& hook = {});

// ---- checkpoint ---------------------------------------------------------

inline constexpr const char* kCheckpointHeader = "capts-checkpoint v1";

std::string serialize_checkpoint(const CatrModel& model);
CatrModel parse_checkpoint(std::string_view bytes);
void write_checkpoint(const CatrModel& model, const std::filesystem::path& path);
CatrModel read_checkpoint(const std::filesystem::path& path);
// Fingerprint of the serialized checkpoint.
std::string checkpoint_hash(const CatrModel& model);

}  // namespace capts
