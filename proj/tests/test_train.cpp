#include <doctest.h>

#include <limits>
#include <random>

#include "capts/train.hpp"
#include "support.hpp"

using namespace capts;

namespace {

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.d = 8;
  t.d_a = 8;
  t.d_h = 8;
  t.seq_len = 6;
  t.epochs = epochs;
  t.batch_size = 4;
  t.learning_rate = 0.01;
  return t;
}

const std::vector<ChannelId> kRoster(kAllChannels.begin(), kAllChannels.end());

}  // namespace

TEST_CASE("training is deterministic for a fixed seed") {
  std::mt19937_64 rng(1);
  const auto data = capts::testing::separable_requests(rng, 24, kRoster);
  const auto cfg = tiny_train(2);
  const auto mc = cfg.model_config(30, 10, kRoster);
  const auto a = train_model(data, mc, cfg);
  const auto b = train_model(data, mc, cfg);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  auto other = cfg;
  other.seed = 2;
  CHECK(serialize_checkpoint(train_model(data, mc, other)) != serialize_checkpoint(a));
}

TEST_CASE("separable toy: loss falls and positives outrank negatives") {
  std::mt19937_64 rng(3);
  const auto data = capts::testing::separable_requests(rng, 80, kRoster);
  const auto cfg = tiny_train(25);
  TrainReport rep;
  const auto model = train_model(data, cfg.model_config(30, 10, kRoster), cfg, &rep);
  REQUIRE(rep.epochs.size() == 25);
  CHECK(rep.epochs.back().loss.total < 0.5 * rep.epochs.front().loss.total);
  CHECK(rep.epochs.back().loss.value < rep.epochs.front().loss.value);

  std::mt19937_64 held(4);
  const auto test = capts::testing::separable_requests(held, 40, kRoster);
  std::vector<double> pos, neg;
  for (const auto& r : test) {
    const auto preds = predict(model, r.features);
    for (std::size_t t = 0; t < preds.size(); ++t)
      (r.targets[t * kRoster.size()].value_label > 0 ? pos : neg).push_back(preds[t].channels[0].calibrated);
  }
  REQUIRE(!pos.empty());
  REQUIRE(!neg.empty());
  std::size_t wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n;
  const double auc = static_cast<double>(wins) / static_cast<double>(pos.size() * neg.size());
  MESSAGE("held-out AUC " << auc);
  CHECK(auc > 0.95);
}

TEST_CASE("non-finite targets surface as a numerical error") {
  std::mt19937_64 rng(5);
  auto data = capts::testing::separable_requests(rng, 8, kRoster);
  data[0].targets[0].intensity = std::numeric_limits<double>::quiet_NaN();
  const auto cfg = tiny_train(1);
  CHECK_THROWS_AS(train_model(data, cfg.model_config(30, 10, kRoster), cfg), NumericalError);
}

TEST_CASE("invalid train configs are rejected") {
  auto cfg = tiny_train(1);
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train(1);
  cfg.lambda = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train(1);
  CHECK_THROWS_AS(train_model({}, cfg.model_config(3, 3, kRoster), cfg), ConfigError);
}

TEST_CASE("training requests join records with candidate triggers") {
  Corpus corpus;
  corpus.catalog = capts::testing::make_catalog(6, 3, 1);
  corpus.users.push_back(capts::testing::make_history(7, {{1, 20}, {2, 30}, {1, 10}, {4, 50}}, 100, 10));
  VamConfig vam;
  vam.max_candidates = 2;
  const std::vector<ChannelId> roster = {ChannelId::cooccurrence, ChannelId::content};
  const RequestRef ref{99, 7, 140, 3};  // prefix: 1, 2, 1

  std::vector<SupervisionRecord> recs;
  for (ItemId t : {1u, 2u})
    for (ChannelId c : roster) {
      SupervisionRecord r;
      r.request_id = 99;
      r.trigger = t;
      r.channel = c;
      r.intensity = t + (c == ChannelId::content ? 0.5 : 0.0);
      r.value_label = t == 1;
      r.uniqueness_label = c == ChannelId::content;
      recs.push_back(r);
    }
  const std::vector<RequestRef> refs = {ref};
  const auto out = build_training_requests(corpus, refs, recs, vam, roster, 5);
  REQUIRE(out.size() == 1);
  const auto& tr = out[0];
  REQUIRE(tr.features.triggers.size() == 2);
  CHECK(tr.features.triggers[0].item == 1);  // most recent first
  CHECK(tr.features.triggers[1].item == 2);
  REQUIRE(tr.targets.size() == 4);
  CHECK(tr.targets[0].intensity == 1.0);
  CHECK(tr.targets[1].intensity == 1.5);
  CHECK(tr.targets[2].intensity == 2.0);
  CHECK(tr.targets[0].value_label == 1.0);
  CHECK(tr.targets[3].uniqueness_label == 1.0);

  auto missing = recs;
  missing.pop_back();
  CHECK_THROWS_AS(build_training_requests(corpus, refs, missing, vam, roster, 5), ConfigError);
  auto unknown = refs;
  unknown[0].user = 8;
  CHECK_THROWS_AS(build_training_requests(corpus, unknown, recs, vam, roster, 5), ConfigError);
}
