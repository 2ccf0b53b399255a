#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capts/pipeline.hpp"

namespace capts {

// Raised when a command would overwrite existing output without --force.
class OutputExists : public IoError {
 public:
  using IoError::IoError;
};

// On-disk layout of one run: <data_root>/<config hash>-<seed>/...
// Non-empty entries of cfg.paths replace the defaults.
class Workspace {
 public:
  Workspace(RunConfig cfg, std::uint64_t seed, const std::filesystem::path& data_root, bool force);

  const RunConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  bool force() const { return force_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path events() const;
  std::filesystem::path catalog() const;
  std::filesystem::path snapshots() const;
  std::filesystem::path supervision() const;
  std::filesystem::path requests() const;
  std::filesystem::path checkpoint() const;
  std::filesystem::path reports() const;
  std::filesystem::path report(const std::string& name) const { return reports() / name; }

  // Throws OutputExists unless force; with force the old output is removed.
  void claim(const std::filesystem::path& p) const;

 private:
  std::filesystem::path pick(const std::string& override_path, const std::string& fallback) const;

  RunConfig cfg_;
  std::uint64_t seed_;
  bool force_;
  std::filesystem::path dir_;
};

// Each stage builds missing prerequisites first; only its own outputs are
// subject to the --force rule.
void stage_gen_data(const Workspace& ws);
void stage_build_indexes(const Workspace& ws);
void stage_build_supervision(const Workspace& ws);
void stage_train(const Workspace& ws);
EvalReport stage_eval(const Workspace& ws, const std::vector<std::string>& methods);
LeakageReport stage_audit_leakage(const Workspace& ws);
std::vector<VariantResult> stage_ablate(const Workspace& ws);
std::vector<SweepPoint> stage_sweep(const Workspace& ws, const std::vector<int>& windows);
void stage_run(const Workspace& ws);

Corpus load_corpus(const Workspace& ws);
SnapshotStore load_snapshot_store(const std::filesystem::path& dir);
CatrModel load_checkpoint(const Workspace& ws);

inline constexpr const char* kAblationHeaderPrefix = "variant,k,union_recall,delta_union_recall";

}  // namespace capts
