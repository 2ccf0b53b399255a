#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "capts/catr.hpp"
#include "capts/vam.hpp"

namespace capts {

struct TrainConfig {
  double lambda = 0.1;
  double mu = 0.1;
  double beta = 0.1;
  double learning_rate = 1e-3;
  int epochs = 4;
  int batch_size = 8;  // request instances per step
  std::uint64_t seed = 1;
  int seq_len = 50;
  int d = 32;
  int d_a = 32;
  int d_h = 64;
  bool use_calibrator = true;

  void validate() const;
  ModelConfig model_config(int n_items, int n_users, std::vector<ChannelId> roster) const;
};

struct EpochReport {
  int epoch = 0;
  LossBreakdown loss;  // example-weighted mean over the epoch's steps
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::size_t requests = 0;
  std::size_t examples = 0;
};

// Joins supervision records with the request prefixes they came from.
// Triggers keep the order of the request's candidate list (most recent first).
std::vector<TrainingRequest> build_training_requests(const Corpus& corpus,
                                                     std::span<const RequestRef> requests,
                                                     std::span<const SupervisionRecord> records,
                                                     const VamConfig& vam,
                                                     const std::vector<ChannelId>& roster, int seq_len);

// Adam over shuffled request batches. Deterministic for a fixed seed.
// Throws NumericalError when the loss becomes non-finite.
CatrModel train_model(std::span<const TrainingRequest> data, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, TrainReport* report = nullptr);

inline constexpr const char* kTrainReportHeader =
    "epoch,total,value,calibration,diversity,weighted_calibration,weighted_diversity,examples,clamps,seconds";

void write_train_report(const TrainReport& report, const std::filesystem::path& path);

}  // namespace capts
