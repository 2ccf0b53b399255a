#include <doctest.h>

#include <random>

#include "capts/catr.hpp"
#include "support.hpp"

using namespace capts;

TEST_CASE("feature buckets") {
  CHECK(time_bucket(0) == 0);
  CHECK(time_bucket(59) == 0);
  CHECK(time_bucket(60) == 1);
  CHECK(time_bucket(3599) == 2);
  CHECK(time_bucket(86400) == 5);
  CHECK(time_bucket(30 * 86400) == 7);
  CHECK(watch_bucket(0) == 0);
  CHECK(watch_bucket(7) == 1);
  CHECK(watch_bucket(29.9) == 2);
  CHECK(watch_bucket(500) == 5);
  CHECK(tod_bucket(0) == 0);
  CHECK(tod_bucket(6 * 3600) == 1);
  CHECK(tod_bucket(86400 + 23 * 3600) == 3);
}

TEST_CASE("build_features reads only the prefix") {
  const auto h = capts::testing::make_history(2, {{1, 20}, {2, 3}, {3, 40}, {4, 90}}, 1000, 100);
  const std::vector<ItemId> triggers = {2, 1, 9};
  const auto f = build_features(h, 3, 1250, triggers, 10);
  CHECK(f.user == 2);
  REQUIRE(f.sequence.size() == 2);  // item 2 is not an effective view, item 4 is in the future
  CHECK(f.sequence[0].item == 3);
  CHECK(f.sequence[1].item == 1);
  CHECK(f.sequence[0].time_bucket == time_bucket(50));
  CHECK(f.sequence[0].watch_bucket == watch_bucket(40));
  REQUIRE(f.triggers.size() == 3);
  CHECK(f.triggers[0].watch_bucket == watch_bucket(3));
  CHECK(f.triggers[1].time_bucket == time_bucket(250));
  CHECK(f.triggers[2].item == 9);

  const auto short_seq = build_features(h, 4, 2000, triggers, 1);
  REQUIRE(short_seq.sequence.size() == 1);
  CHECK(short_seq.sequence[0].item == 4);
}

TEST_CASE("gradient check on random small models") {
  std::mt19937_64 rng(20240601);
  const LossWeights w{0.3, 0.2};
  for (int trial = 0; trial < 8; ++trial) {
    auto mc = capts::testing::random_model_case(rng, 4, 2 + trial % 2, 3, 1 + trial % 2, trial % 4 != 3);
    const auto rep = gradient_check(mc.model, mc.batch, w);
    for (const auto& b : rep.blocks) {
      INFO("trial " << trial << " block " << b.name << " rel err " << b.max_rel_error);
      CHECK(b.pass);
    }
  }
}

TEST_CASE("gradient check detects a perturbed gradient") {
  std::mt19937_64 rng(11);
  auto mc = capts::testing::random_model_case(rng, 4, 3, 3);
  const LossWeights w{0.1, 0.1};
  REQUIRE(gradient_check(mc.model, mc.batch, w).pass);

  const auto& target = mc.model.block("attn.q");
  const auto rep = gradient_check(mc.model, mc.batch, w, 1e-4, 1e-4, [&](const CatrModel&, std::vector<double>& g) {
    for (std::size_t i = target.offset; i < target.offset + target.size(); ++i) g[i] *= 1.05;
  });
  CHECK_FALSE(rep.pass);
  for (const auto& b : rep.blocks) CHECK(b.pass == (b.name != "attn.q"));
}

TEST_CASE("calibrated value stays within beta of the base and inside [0, 1]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> base(0.0, 1.0), q(-50.0, 50.0), beta(0.01, 0.5);
  for (int i = 0; i < 10000; ++i) {
    const double b = base(rng), bt = beta(rng);
    const double v = calibrate(b, q(rng), bt);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::abs(v - b) <= bt + 1e-12);
  }
}

TEST_CASE("predictions respect head ranges and the calibrator switch") {
  std::mt19937_64 rng(6);
  for (bool calib : {true, false}) {
    auto mc = capts::testing::random_model_case(rng, 8, 3, 4, 3, calib);
    for (const auto& r : mc.batch) {
      const auto preds = predict(mc.model, r.features);
      REQUIRE(preds.size() == r.features.triggers.size());
      for (const auto& p : preds) {
        REQUIRE(p.channels.size() == 3);
        for (const auto& c : p.channels) {
          CHECK(c.base > 0.0);
          CHECK(c.base < 1.0);
          CHECK(c.uniqueness > 0.0);
          CHECK(c.uniqueness < 1.0);
          CHECK(std::abs(c.calibrated - c.base) <= mc.model.config().beta + 1e-12);
          if (!calib) CHECK(c.calibrated == c.base);
        }
      }
    }
  }
}

TEST_CASE("predictions do not depend on other triggers in the request") {
  std::mt19937_64 rng(8);
  auto mc = capts::testing::random_model_case(rng, 8, 3, 2, 4);
  const auto& f = mc.batch[1].features;
  const auto all = predict(mc.model, f);
  auto single = f;
  single.triggers = {f.triggers[2]};
  const auto one = predict(mc.model, single);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(one[0].channels[c].calibrated == doctest::Approx(all[2].channels[c].calibrated).epsilon(1e-12));
}

TEST_CASE("unknown ids fall back to the out-of-vocabulary row") {
  std::mt19937_64 rng(9);
  auto mc = capts::testing::random_model_case(rng, 4, 2, 1);
  CHECK(mc.model.item_row(0) == 1);
  CHECK(mc.model.item_row(1000) == 0);
  CHECK(mc.model.user_row(1000) == 0);
  auto f = mc.batch[0].features;
  f.triggers[0].item = 1000;
  f.user = 1000;
  for (const auto& p : predict(mc.model, f))
    for (const auto& c : p.channels) CHECK(std::isfinite(c.calibrated));
}

TEST_CASE("batch loss: breakdown adds up and zero weights drop their terms") {
  std::mt19937_64 rng(10);
  auto mc = capts::testing::random_model_case(rng, 6, 3, 5, 2);
  const auto full = batch_loss(mc.model, mc.batch, {0.5, 0.25});
  CHECK(full.examples == 10);
  CHECK(full.total == doctest::Approx(full.value + 0.5 * full.calibration + 0.25 * full.diversity));
  const auto bare = batch_loss(mc.model, mc.batch, {0.0, 0.0});
  CHECK(bare.total == doctest::Approx(bare.value));

  std::vector<double> g(mc.model.parameter_count(), 0.0);
  batch_loss(mc.model, mc.batch, {0.0, 0.0}, &g);
  for (ChannelId c : mc.model.config().roster) {
    const auto& b = mc.model.block("uniq." + std::string(channel_name(c)) + ".w1");
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("checkpoint round-trip and strict parsing") {
  std::mt19937_64 rng(12);
  auto mc = capts::testing::random_model_case(rng, 5, 3, 1);
  mc.model.round_to_float();
  const auto bytes = serialize_checkpoint(mc.model);
  const auto back = parse_checkpoint(bytes);
  CHECK(std::vector<double>(back.params().begin(), back.params().end()) ==
        std::vector<double>(mc.model.params().begin(), mc.model.params().end()));
  CHECK(back.config().roster == mc.model.config().roster);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(checkpoint_hash(back) == checkpoint_hash(mc.model));

  capts::testing::TempDir dir;
  write_checkpoint(mc.model, dir.path() / "m.ckpt");
  CHECK(serialize_checkpoint(read_checkpoint(dir.path() / "m.ckpt")) == bytes);

  CHECK_THROWS_AS(parse_checkpoint("nope\n"), IoError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 7)), IoError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), IoError);
  auto renamed = bytes;
  renamed.replace(renamed.find("items="), 6, "itemz=");
  CHECK_THROWS_AS(parse_checkpoint(renamed), IoError);
  CHECK_THROWS_AS(read_checkpoint(dir.path() / "missing.ckpt"), IoError);

  auto other = capts::testing::random_model_case(rng, 5, 3, 1);
  CHECK(checkpoint_hash(other.model) != checkpoint_hash(mc.model));
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.n_items = 5;
  c.n_users = 2;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.d = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.roster.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.time_buckets = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
