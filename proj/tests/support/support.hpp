#pragma once

// Independent oracles and random instance builders shared by the unit tests
// and the acceptance binary. Nothing here calls the code under test except
// where noted (instances are fed to it by the caller).

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "capts/catr.hpp"
#include "capts/channels.hpp"
#include "capts/routing.hpp"
#include "capts/vam.hpp"

namespace capts::testing {

// ---- value attribution --------------------------------------------------

struct VamInstance {
  std::vector<ChannelId> roster;
  VamConfig cfg;
  RequestInstance request;
  std::vector<std::shared_ptr<const IndexSnapshot>> snapshots;  // one per roster channel
};

// Random tiny instance: up to `max_triggers` triggers, up to `max_retrieved`
// neighbors per (trigger, channel), up to `max_window` window entries. Watch
// times and scales are dyadic so every sum is exact in any order.
VamInstance random_vam_instance(std::mt19937_64& rng, int max_triggers = 5, int max_retrieved = 10,
                                int max_window = 10);

SnapshotStore store_of(const VamInstance& inst);

// Nested-loop evaluation of reward, intensity, labels and uniqueness.
std::vector<SupervisionRecord> vam_oracle(const VamInstance& inst);

// ---- routing ------------------------------------------------------------

// Best objective sum_c sum_{t in S_c} s_c(t) over all S_c with |S_c| <= B_c,
// by enumerating subsets.
double brute_force_routing_objective(std::size_t n_triggers, std::span<const double> scores,
                                     const std::vector<ChannelId>& roster, const RoutingConfig& cfg);

double routing_objective(const RoutingAssignment& a);

// ---- model --------------------------------------------------------------

struct ModelCase {
  CatrModel model;
  std::vector<TrainingRequest> batch;
};

// Small random model (d = dim) with `channels` roster entries and a batch of
// `requests` requests; targets are random but consistent with the label
// contracts.
ModelCase random_model_case(std::mt19937_64& rng, int dim, int channels, int requests, int triggers_per_request = 1,
                            bool use_calibrator = true);

// Toy data where value labels depend only on the trigger's watch bucket.
std::vector<TrainingRequest> separable_requests(std::mt19937_64& rng, int n, const std::vector<ChannelId>& roster);

// ---- corpus -------------------------------------------------------------

// Handcrafted history helper: events at the given times and watch seconds.
UserHistory make_history(UserId user, const std::vector<std::pair<ItemId, double>>& views, EpochSeconds t0,
                         EpochSeconds step);

Catalog make_catalog(int n_items, int dim, std::uint64_t seed);

// Unique scratch directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace capts::testing
