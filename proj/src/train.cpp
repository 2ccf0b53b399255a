#include "capts/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capts/text_io.hpp"

namespace capts {

void TrainConfig::validate() const {
  if (lambda < 0.0 || mu < 0.0) throw ConfigError("train.lambda and train.mu must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("train.beta must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (seq_len < 1) throw ConfigError("train.seq_len must be >= 1");
  if (d < 1 || d_a < 1 || d_h < 1) throw ConfigError("train widths must be positive");
}

ModelConfig TrainConfig::model_config(int n_items, int n_users, std::vector<ChannelId> roster) const {
  ModelConfig m;
  m.d = d;
  m.d_a = d_a;
  m.d_h = d_h;
  m.seq_len = seq_len;
  m.n_items = n_items;
  m.n_users = n_users;
  m.beta = beta;
  m.use_calibrator = use_calibrator;
  m.roster = std::move(roster);
  return m;
}

namespace {

const UserHistory* find_user(const Corpus& corpus, UserId u) {
  const auto it = std::lower_bound(corpus.users.begin(), corpus.users.end(), u,
                                   [](const UserHistory& h, UserId id) { return h.user < id; });
  return it != corpus.users.end() && it->user == u ? &*it : nullptr;
}

std::vector<ItemId> recent_distinct(const UserHistory& h, std::size_t prefix_len, int limit) {
  std::vector<ItemId> out;
  std::unordered_set<ItemId> seen;
  for (std::size_t i = std::min(prefix_len, h.events.size()); i-- > 0 && static_cast<int>(out.size()) < limit;)
    if (seen.insert(h.events[i].item).second) out.push_back(h.events[i].item);
  return out;
}

}  // namespace

std::vector<TrainingRequest> build_training_requests(const Corpus& corpus,
                                                     std::span<const RequestRef> requests,
                                                     std::span<const SupervisionRecord> records,
                                                     const VamConfig& vam,
                                                     const std::vector<ChannelId>& roster, int seq_len) {
  std::unordered_map<RequestId, std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t i = 0; i < records.size();) {
    std::size_t j = i;
    while (j < records.size() && records[j].request_id == records[i].request_id) ++j;
    if (!ranges.emplace(records[i].request_id, std::make_pair(i, j)).second)
      throw ConfigError("supervision records are not grouped by request");
    i = j;
  }

  std::vector<TrainingRequest> out;
  out.reserve(requests.size());
  const auto R = roster.size();
  for (const auto& ref : requests) {
    const auto range = ranges.find(ref.request_id);
    if (range == ranges.end()) continue;  // no eligible triggers
    const auto* h = find_user(corpus, ref.user);
    if (!h) throw ConfigError(fmt::format("supervision references unknown user {}", ref.user));
    const auto candidates = recent_distinct(*h, ref.prefix_len, vam.max_candidates);

    std::unordered_map<std::uint64_t, const SupervisionRecord*> by_key;
    for (std::size_t i = range->second.first; i < range->second.second; ++i) {
      const auto& r = records[i];
      by_key[(static_cast<std::uint64_t>(r.trigger) << 8) | static_cast<std::uint8_t>(r.channel)] = &r;
    }
    TrainingRequest tr;
    tr.request_id = ref.request_id;
    tr.features = build_features(*h, ref.prefix_len, ref.tau0, candidates, seq_len, vam.effective_view_seconds);
    tr.targets.reserve(candidates.size() * R);
    for (ItemId t : candidates) {
      for (ChannelId c : roster) {
        const auto it = by_key.find((static_cast<std::uint64_t>(t) << 8) | static_cast<std::uint8_t>(c));
        if (it == by_key.end())
          throw ConfigError(fmt::format("request {} lacks a record for trigger {} on {}", ref.request_id, t,
                                        channel_name(c)));
        const auto& r = *it->second;
        tr.targets.push_back({static_cast<double>(r.value_label), r.intensity, vam.params(c).cap,
                              static_cast<double>(r.uniqueness_label)});
      }
    }
    if (by_key.size() != candidates.size() * R)
      throw ConfigError(fmt::format("request {} has records outside its candidate list", ref.request_id));
    out.push_back(std::move(tr));
  }
  return out;
}

CatrModel train_model(std::span<const TrainingRequest> data, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  CatrModel model(model_cfg, cfg.seed);
  const LossWeights weights{cfg.lambda, cfg.mu};

  const std::size_t P = model.parameter_count();
  std::vector<double> grad(P), m(P, 0.0), v(P, 0.0);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::uint64_t step = 0;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eedULL);
  std::vector<TrainingRequest> batch;

  if (report) {
    report->epochs.clear();
    report->requests = data.size();
    report->examples = 0;
    for (const auto& r : data) report->examples += r.features.triggers.size();
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown acc;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto loss = batch_loss(model, batch, weights, &grad);
      if (loss.examples == 0) continue;
      if (!std::isfinite(loss.total))
        throw NumericalError(fmt::format("training diverged at epoch {} step {} (loss {}, value {}, cal {}, div {})",
                                         epoch, step, loss.total, loss.value, loss.calibration, loss.diversity));
      const auto n = static_cast<double>(loss.examples);
      acc.total += loss.total * n;
      acc.value += loss.value * n;
      acc.calibration += loss.calibration * n;
      acc.diversity += loss.diversity * n;
      acc.weighted_calibration += loss.weighted_calibration * n;
      acc.weighted_diversity += loss.weighted_diversity * n;
      acc.examples += loss.examples;
      acc.clamps += loss.clamps;

      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      auto params = model.params();
      for (std::size_t i = 0; i < P; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        params[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
    if (!model.all_finite()) throw NumericalError(fmt::format("non-finite parameters after epoch {}", epoch));
    if (acc.examples > 0) {
      const auto n = static_cast<double>(acc.examples);
      acc.total /= n;
      acc.value /= n;
      acc.calibration /= n;
      acc.diversity /= n;
      acc.weighted_calibration /= n;
      acc.weighted_diversity /= n;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::debug("epoch {}: loss {:.5f} (value {:.5f}, cal {:.5f}, div {:.5f}) {:.1f}s", epoch, acc.total,
                  acc.value, acc.calibration, acc.diversity, secs);
    if (report) report->epochs.push_back({epoch, acc, secs});
  }
  model.round_to_float();
  return model;
}

void write_train_report(const TrainReport& report, const std::filesystem::path& path) {
  TextWriter w(path);
  w.line(kTrainReportHeader);
  for (const auto& e : report.epochs) {
    const auto& l = e.loss;
    w.line(fmt::format("{},{:.8g},{:.8g},{:.8g},{:.8g},{:.8g},{:.8g},{},{},{:.3f}", e.epoch, l.total, l.value,
                       l.calibration, l.diversity, l.weighted_calibration, l.weighted_diversity, l.examples,
                       l.clamps, e.seconds));
  }
  w.close();
}

}  // namespace capts
