#include "capts/config.hpp"

#include <set>

#include <fmt/format.h>

#include "capts/text_io.hpp"

namespace capts {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", name_));
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      it->get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("config key '{}.{}': {}", name_, key, e.what()));
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError(fmt::format("unknown config key '{}.{}'", name_, k));
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

ChannelId channel_from(const json& j) {
  const auto name = j.get<std::string>();
  const auto c = parse_channel(name);
  if (!c) throw ConfigError(fmt::format("unknown channel '{}'", name));
  return *c;
}

}  // namespace

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"users", c.users},
           {"items", c.items},
           {"topics", c.topics},
           {"authors_per_topic", c.authors_per_topic},
           {"content_dim", c.content_dim},
           {"days", c.days},
           {"start_time", c.start_time},
           {"min_interactions", c.min_interactions},
           {"mean_extra_interactions", c.mean_extra_interactions},
           {"session_length", c.session_length},
           {"interests_per_user", c.interests_per_user},
           {"channel_mix", c.channel_mix},
           {"mechanism_boost", c.mechanism_boost},
           {"seed_rate", c.seed_rate},
           {"explore_rate", c.explore_rate},
           {"continuation_rate", c.continuation_rate},
           {"anchor_horizon", c.anchor_horizon},
           {"bundle_size", c.bundle_size},
           {"chain_length", c.chain_length},
           {"family_size", c.family_size},
           {"coherent_topic_fraction", c.coherent_topic_fraction},
           {"fresh_item_fraction", c.fresh_item_fraction}};
}

void from_json(const json& j, GeneratorConfig& c) {
  Section s(j, "generator");
  s.get("users", c.users);
  s.get("items", c.items);
  s.get("topics", c.topics);
  s.get("authors_per_topic", c.authors_per_topic);
  s.get("content_dim", c.content_dim);
  s.get("days", c.days);
  s.get("start_time", c.start_time);
  s.get("min_interactions", c.min_interactions);
  s.get("mean_extra_interactions", c.mean_extra_interactions);
  s.get("session_length", c.session_length);
  s.get("interests_per_user", c.interests_per_user);
  s.get("channel_mix", c.channel_mix);
  s.get("mechanism_boost", c.mechanism_boost);
  s.get("seed_rate", c.seed_rate);
  s.get("explore_rate", c.explore_rate);
  s.get("continuation_rate", c.continuation_rate);
  s.get("anchor_horizon", c.anchor_horizon);
  s.get("bundle_size", c.bundle_size);
  s.get("chain_length", c.chain_length);
  s.get("family_size", c.family_size);
  s.get("coherent_topic_fraction", c.coherent_topic_fraction);
  s.get("fresh_item_fraction", c.fresh_item_fraction);
  s.finish();
}

void to_json(json& j, const SnapshotConfig& c) {
  json roster = json::array();
  for (ChannelId ch : c.roster) roster.push_back(std::string(channel_name(ch)));
  j = json{{"roster", roster},
           {"k_ret", c.k_ret},
           {"cadence_seconds", c.cadence_seconds},
           {"effective_view_seconds", c.effective_view_seconds},
           {"swing_alpha", c.swing_alpha},
           {"embedding",
            {{"dim", c.embedding.dim},
             {"epochs", c.embedding.epochs},
             {"window", c.embedding.window},
             {"negatives", c.embedding.negatives},
             {"learning_rate", c.embedding.learning_rate}}},
           {"exec", c.exec == Exec::serial ? "serial" : "parallel"}};
}

void from_json(const json& j, SnapshotConfig& c) {
  Section s(j, "snapshots");
  if (const auto* r = s.child("roster")) {
    if (!r->is_array() || r->empty()) throw ConfigError("snapshots.roster must be a non-empty array");
    c.roster.clear();
    for (const auto& x : *r) {
      const auto ch = channel_from(x);
      if (std::find(c.roster.begin(), c.roster.end(), ch) != c.roster.end())
        throw ConfigError("snapshots.roster lists a channel twice");
      c.roster.push_back(ch);
    }
    std::sort(c.roster.begin(), c.roster.end());
  }
  s.get("k_ret", c.k_ret);
  s.get("cadence_seconds", c.cadence_seconds);
  s.get("effective_view_seconds", c.effective_view_seconds);
  s.get("swing_alpha", c.swing_alpha);
  if (const auto* e = s.child("embedding")) {
    Section es(*e, "snapshots.embedding");
    es.get("dim", c.embedding.dim);
    es.get("epochs", c.embedding.epochs);
    es.get("window", c.embedding.window);
    es.get("negatives", c.embedding.negatives);
    es.get("learning_rate", c.embedding.learning_rate);
    es.finish();
  }
  std::string exec = c.exec == Exec::serial ? "serial" : "parallel";
  s.get("exec", exec);
  if (exec == "serial") c.exec = Exec::serial;
  else if (exec == "parallel") c.exec = Exec::parallel;
  else throw ConfigError(fmt::format("snapshots.exec must be 'serial' or 'parallel', got '{}'", exec));
  s.finish();
}

void to_json(json& j, const VamConfig& c) {
  json channels = json::object();
  for (ChannelId ch : kAllChannels) {
    const auto& p = c.params(ch);
    channels[std::string(channel_name(ch))] = {{"scale", p.scale}, {"cap", p.cap}, {"gamma", p.gamma}};
  }
  j = json{{"window_size", c.window_size},
           {"stride", c.stride},
           {"max_candidates", c.max_candidates},
           {"channels", channels},
           {"theta", c.theta},
           {"epsilon", c.epsilon},
           {"target_positive_rate", c.target_positive_rate},
           {"effective_view_seconds", c.effective_view_seconds}};
}

void from_json(const json& j, VamConfig& c) {
  Section s(j, "vam");
  s.get("window_size", c.window_size);
  s.get("stride", c.stride);
  s.get("max_candidates", c.max_candidates);
  if (const auto* ch = s.child("channels")) {
    if (!ch->is_object()) throw ConfigError("vam.channels must be an object");
    for (const auto& [name, v] : ch->items()) {
      const auto id = parse_channel(name);
      if (!id) throw ConfigError(fmt::format("vam.channels: unknown channel '{}'", name));
      auto& p = c.params(*id);
      Section ps(v, "vam.channels." + name);
      ps.get("scale", p.scale);
      ps.get("cap", p.cap);
      ps.get("gamma", p.gamma);
      ps.finish();
    }
  }
  s.get("theta", c.theta);
  s.get("epsilon", c.epsilon);
  s.get("target_positive_rate", c.target_positive_rate);
  s.get("effective_view_seconds", c.effective_view_seconds);
  s.finish();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lambda", c.lambda},   {"mu", c.mu},       {"beta", c.beta},   {"learning_rate", c.learning_rate},
           {"epochs", c.epochs},   {"batch_size", c.batch_size},           {"seq_len", c.seq_len},
           {"d", c.d},             {"d_a", c.d_a},     {"d_h", c.d_h},     {"use_calibrator", c.use_calibrator}};
}

void from_json(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.get("lambda", c.lambda);
  s.get("mu", c.mu);
  s.get("beta", c.beta);
  s.get("learning_rate", c.learning_rate);
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  s.get("seq_len", c.seq_len);
  s.get("d", c.d);
  s.get("d_a", c.d_a);
  s.get("d_h", c.d_h);
  s.get("use_calibrator", c.use_calibrator);
  s.finish();
}

void to_json(json& j, const RoutingConfig& c) {
  json budgets = json::object();
  for (ChannelId ch : kAllChannels) budgets[std::string(channel_name(ch))] = c.budget(ch);
  j = json{{"budgets", budgets},
           {"eta", c.eta},
           {"nic_rise_factor", c.nic_rise_factor},
           {"nic_recent_fraction", c.nic_recent_fraction}};
}

void from_json(const json& j, RoutingConfig& c) {
  Section s(j, "routing");
  if (const auto* b = s.child("budgets")) {
    if (b->is_number_integer()) {
      c.budgets.fill(b->get<int>());
    } else if (b->is_object()) {
      for (const auto& [name, v] : b->items()) {
        const auto id = parse_channel(name);
        if (!id || !v.is_number_integer())
          throw ConfigError(fmt::format("routing.budgets: bad entry '{}'", name));
        c.budgets[static_cast<std::size_t>(*id)] = v.get<int>();
      }
    } else {
      throw ConfigError("routing.budgets must be an integer or an object keyed by channel");
    }
  }
  s.get("eta", c.eta);
  s.get("nic_rise_factor", c.nic_rise_factor);
  s.get("nic_recent_fraction", c.nic_recent_fraction);
  s.finish();
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"k_grid", c.k_grid}, {"test_views", c.test_views}, {"epsilon", c.epsilon}, {"methods", c.methods}};
}

void from_json(const json& j, EvalConfig& c) {
  Section s(j, "eval");
  s.get("k_grid", c.k_grid);
  s.get("test_views", c.test_views);
  s.get("epsilon", c.epsilon);
  s.get("methods", c.methods);
  s.finish();
}

void to_json(json& j, const SupplyConfig& c) {
  j = json{{"long_history", c.long_history},
           {"recent_n", c.recent_n},
           {"top_m", c.top_m},
           {"ttl_seconds", c.ttl_seconds}};
}

void from_json(const json& j, SupplyConfig& c) {
  Section s(j, "supply");
  s.get("long_history", c.long_history);
  s.get("recent_n", c.recent_n);
  s.get("top_m", c.top_m);
  s.get("ttl_seconds", c.ttl_seconds);
  s.finish();
}

void to_json(json& j, const PathsConfig& c) {
  j = json{{"events", c.events},           {"catalog", c.catalog},       {"snapshots", c.snapshots},
           {"supervision", c.supervision}, {"checkpoint", c.checkpoint}, {"reports", c.reports}};
}

void from_json(const json& j, PathsConfig& c) {
  Section s(j, "paths");
  s.get("events", c.events);
  s.get("catalog", c.catalog);
  s.get("snapshots", c.snapshots);
  s.get("supervision", c.supervision);
  s.get("checkpoint", c.checkpoint);
  s.get("reports", c.reports);
  s.finish();
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"data_root", c.data_root},
           {"seed", c.seed},
           {"generator", c.generator},
           {"snapshots", c.snapshots},
           {"replay_delta", c.replay_delta},
           {"vam", c.vam},
           {"calibrate_gamma", c.calibrate_gamma},
           {"train", c.train},
           {"routing", c.routing},
           {"eval", c.eval},
           {"supply", c.supply},
           {"sweep_windows", c.sweep_windows},
           {"paths", c.paths}};
}

void from_json(const json& j, RunConfig& c) {
  Section s(j, "config");
  s.get("data_root", c.data_root);
  s.get("seed", c.seed);
  s.get("generator", c.generator);
  s.get("snapshots", c.snapshots);
  s.get("replay_delta", c.replay_delta);
  s.get("vam", c.vam);
  s.get("calibrate_gamma", c.calibrate_gamma);
  s.get("train", c.train);
  s.get("routing", c.routing);
  s.get("eval", c.eval);
  s.get("supply", c.supply);
  s.get("sweep_windows", c.sweep_windows);
  s.get("paths", c.paths);
  s.finish();
}

void RunConfig::validate() const {
  generator.validate();
  if (snapshots.k_ret < 1) throw ConfigError("snapshots.k_ret must be >= 1");
  if (snapshots.cadence_seconds < 1) throw ConfigError("snapshots.cadence_seconds must be >= 1");
  if (snapshots.embedding.dim < 4) throw ConfigError("snapshots.embedding.dim must be >= 4");
  if (snapshots.roster.empty()) throw ConfigError("snapshots.roster is empty");
  if (replay_delta < 0) throw ConfigError("replay_delta must be >= 0");
  vam.validate();
  train.validate();
  routing.validate();
  eval.validate();
  supply.validate();
  for (int w : sweep_windows)
    if (w < 1) throw ConfigError("sweep_windows entries must be >= 1");
  static const std::set<std::string> known = {"capts", "recent", "tagtop", "ltv", "nic"};
  for (const auto& m : eval.methods)
    if (!known.count(m)) throw ConfigError(fmt::format("unknown method '{}'", m));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t z = seed ^ fnv1a64(stage);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string config_hash(const RunConfig& cfg) {
  json j = cfg;
  j.erase("data_root");
  j.erase("paths");
  j.erase("seed");
  return hex64(fnv1a64(j.dump())).substr(0, 12);
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

std::string dump_run_config(const RunConfig& cfg) { return json(cfg).dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("config file {} does not exist", path.string()));
  return parse_run_config(read_file(path));
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  TextWriter w(path);
  w.raw(dump_run_config(cfg));
  w.close();
}

}  // namespace capts
