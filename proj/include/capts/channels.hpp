#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "capts/corpus.hpp"
#include "capts/kernels.hpp"

namespace capts {

using kernels::Exec;
using kernels::Neighbor;

// A channel's frozen neighbor lists. Lists are indexed by item id and hold at
// most k_ret entries, sorted by descending score then ascending item id.
struct IndexSnapshot {
  ChannelId channel = ChannelId::cooccurrence;
  EpochSeconds as_of = 0;
  int k_ret = kDefaultRetrievalDepth;
  kernels::NeighborLists neighbors;

  std::span<const Neighbor> lookup(ItemId item) const {
    if (item >= neighbors.size()) return {};
    return neighbors[item];
  }
};

struct EmbeddingParams {
  int dim = 16;
  int epochs = 2;
  int window = 5;
  int negatives = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 7;
};

struct SnapshotConfig {
  std::vector<ChannelId> roster{kAllChannels.begin(), kAllChannels.end()};
  int k_ret = kDefaultRetrievalDepth;
  EpochSeconds cadence_seconds = 86400;
  double effective_view_seconds = kDefaultEffectiveViewSeconds;
  double swing_alpha = 1.0;
  EmbeddingParams embedding;
  Exec exec = Exec::parallel;
};

// Co-consumption neighbors from effective views with ts <= as_of.
IndexSnapshot build_cooccurrence_snapshot(const Corpus& corpus, EpochSeconds as_of, int k_ret,
                                          double alpha = 1.0,
                                          double threshold = kDefaultEffectiveViewSeconds,
                                          Exec exec = Exec::parallel);

// Skip-gram item vectors trained on per-user effective-view sequences with
// ts <= as_of; neighbors by exact cosine among items seen in that prefix.
IndexSnapshot build_embedding_snapshot(const Corpus& corpus, EpochSeconds as_of, int k_ret,
                                       const EmbeddingParams& params,
                                       double threshold = kDefaultEffectiveViewSeconds,
                                       Exec exec = Exec::parallel);

// Trained item vectors (row-major, unit norm, zero rows for unseen items).
struct ItemVectors {
  int dim = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> seen;
};
ItemVectors train_item_vectors(const Corpus& corpus, EpochSeconds as_of,
                               const EmbeddingParams& params,
                               double threshold = kDefaultEffectiveViewSeconds);

// Cosine over catalog content vectors among items created at or before t.
IndexSnapshot build_content_snapshot(const Catalog& catalog, EpochSeconds t, int k_ret,
                                     Exec exec = Exec::parallel);

IndexSnapshot build_snapshot(ChannelId channel, const Corpus& corpus, EpochSeconds as_of,
                             const SnapshotConfig& cfg);

// Bookkeeping for replay: how many lookups happened, which snapshots were
// consulted, and whether any of them violated the rollback rule.
class ReplayAudit {
 public:
  void record(ChannelId c, EpochSeconds as_of, EpochSeconds tau0, EpochSeconds delta);
  std::uint64_t replays() const { return replays_.load(); }
  std::uint64_t violations() const { return violations_.load(); }
  std::set<std::pair<ChannelId, EpochSeconds>> consulted() const;

 private:
  std::atomic<std::uint64_t> replays_{0};
  std::atomic<std::uint64_t> violations_{0};
  mutable std::mutex mu_;
  std::set<std::pair<ChannelId, EpochSeconds>> consulted_;
};

class SnapshotStore {
 public:
  // as_of must be strictly greater than the channel's latest snapshot.
  void add(std::shared_ptr<const IndexSnapshot> snapshot);

  // Latest snapshot of `c` with as_of <= tau0 - delta, or nullptr.
  const IndexSnapshot* select(ChannelId c, EpochSeconds tau0, EpochSeconds delta) const;

  const std::vector<std::shared_ptr<const IndexSnapshot>>& snapshots(ChannelId c) const;
  std::vector<ChannelId> channels() const;
  std::size_t size() const;

 private:
  std::map<ChannelId, std::vector<std::shared_ptr<const IndexSnapshot>>> by_channel_;
};

// Neighbor list of `trigger` from the latest snapshot at or before
// tau0 - delta. Throws ReplayUnavailable when no snapshot qualifies.
std::span<const Neighbor> replay_retrieve(const SnapshotStore& store, ChannelId c, ItemId trigger,
                                          EpochSeconds tau0,
                                          EpochSeconds delta = kDefaultReplayRollbackSeconds,
                                          ReplayAudit* audit = nullptr);

// Snapshot times: every cadence boundary after the first interaction, up to
// the last interaction.
std::vector<EpochSeconds> snapshot_schedule(const Corpus& corpus, EpochSeconds cadence);

SnapshotStore build_snapshot_store(const Corpus& corpus, const SnapshotConfig& cfg);

// ---- files --------------------------------------------------------------

inline constexpr const char* kSnapshotHeader = "capts-snapshot v1";

std::string serialize_snapshot(const IndexSnapshot& s);
IndexSnapshot parse_snapshot(std::string_view text);
void write_snapshot(const IndexSnapshot& s, const std::filesystem::path& path);
IndexSnapshot read_snapshot(const std::filesystem::path& path);
std::string snapshot_filename(ChannelId c, EpochSeconds as_of);

}  // namespace capts
