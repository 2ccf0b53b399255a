#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capts/channels.hpp"
#include "capts/eval.hpp"
#include "capts/generator.hpp"
#include "capts/routing.hpp"
#include "capts/supply.hpp"
#include "capts/train.hpp"
#include "capts/vam.hpp"

namespace capts {

// Optional path overrides; empty entries resolve under the run directory.
struct PathsConfig {
  std::string events;
  std::string catalog;
  std::string snapshots;
  std::string supervision;
  std::string checkpoint;
  std::string reports;
};

struct RunConfig {
  std::string data_root = "capts-data";
  std::uint64_t seed = 1;
  GeneratorConfig generator;
  SnapshotConfig snapshots;
  EpochSeconds replay_delta = kDefaultReplayRollbackSeconds;
  VamConfig vam;
  bool calibrate_gamma = true;
  TrainConfig train;
  RoutingConfig routing;
  EvalConfig eval;
  SupplyConfig supply;
  std::vector<int> sweep_windows = {50, 100, 150, 200};
  PathsConfig paths;

  const std::vector<ChannelId>& roster() const { return snapshots.roster; }
  void validate() const;
};

// Per-stage seed derived from the top-level seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);

// Fingerprint of everything that affects results (paths and seed excluded).
std::string config_hash(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);
RunConfig parse_run_config(std::string_view text);
std::string dump_run_config(const RunConfig& cfg);

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const SnapshotConfig& c);
void from_json(const nlohmann::json& j, SnapshotConfig& c);
void to_json(nlohmann::json& j, const VamConfig& c);
void from_json(const nlohmann::json& j, VamConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RoutingConfig& c);
void from_json(const nlohmann::json& j, RoutingConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const SupplyConfig& c);
void from_json(const nlohmann::json& j, SupplyConfig& c);
void to_json(nlohmann::json& j, const PathsConfig& c);
void from_json(const nlohmann::json& j, PathsConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace capts
