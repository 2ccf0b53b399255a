#include "capts/catr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "capts/autograd.hpp"
#include "capts/text_io.hpp"

namespace capts {

using autograd::Tape;
using Var = Tape::Var;

void ModelConfig::validate() const {
  if (d < 1 || d_a < 1 || d_h < 1) throw ConfigError("model widths must be positive");
  if (seq_len < 1) throw ConfigError("model.seq_len must be >= 1");
  if (n_items < 0 || n_users < 0) throw ConfigError("model vocabulary sizes must be >= 0");
  if (time_buckets < 8 || watch_buckets < 6 || tod_buckets < 4)
    throw ConfigError("model bucket counts below the feature ranges");
  if (!(beta > 0.0)) throw ConfigError("model.beta must be positive");
  if (roster.empty()) throw ConfigError("model roster is empty");
}

int time_bucket(EpochSeconds age) {
  static constexpr EpochSeconds kEdges[] = {60, 600, 3600, 6 * 3600, 86400, 3 * 86400, 7 * 86400};
  int b = 0;
  for (EpochSeconds e : kEdges) {
    if (age < e) return b;
    ++b;
  }
  return b;
}

int watch_bucket(double watch_seconds) {
  static constexpr double kEdges[] = {7.0, 15.0, 30.0, 60.0, 120.0};
  int b = 0;
  for (double e : kEdges) {
    if (watch_seconds < e) return b;
    ++b;
  }
  return b;
}

int tod_bucket(EpochSeconds ts) {
  auto s = ts % 86400;
  if (s < 0) s += 86400;
  return static_cast<int>(s / 21600);
}

RequestFeatures build_features(const UserHistory& history, std::size_t prefix_len, EpochSeconds tau0,
                               std::span<const ItemId> triggers, int seq_len, double threshold) {
  RequestFeatures f;
  f.user = history.user;
  f.tod_bucket = tod_bucket(tau0);
  prefix_len = std::min(prefix_len, history.events.size());
  std::unordered_map<ItemId, std::size_t> last_seen;
  last_seen.reserve(triggers.size() * 2);
  for (std::size_t i = prefix_len; i-- > 0;) {
    const auto& e = history.events[i];
    if (static_cast<int>(f.sequence.size()) < seq_len && is_effective_view(e, threshold))
      f.sequence.push_back({e.item, time_bucket(tau0 - e.ts), watch_bucket(e.watch_seconds)});
    last_seen.try_emplace(e.item, i);
  }
  f.triggers.reserve(triggers.size());
  for (ItemId t : triggers) {
    SequenceStep s{t, time_bucket(0), 0};
    if (const auto it = last_seen.find(t); it != last_seen.end()) {
      const auto& e = history.events[it->second];
      s.time_bucket = time_bucket(tau0 - e.ts);
      s.watch_bucket = watch_bucket(e.watch_seconds);
    }
    f.triggers.push_back(s);
  }
  return f;
}

// ---- parameters ---------------------------------------------------------

CatrModel::CatrModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  layout();
  std::mt19937_64 rng(seed);
  for (const auto& b : blocks_) {
    auto v = view(b);
    const bool embedding = b.name.ends_with("_emb");
    const bool bias = b.name.ends_with(".b1") || b.name.ends_with(".b2");
    if (bias) continue;
    const double sd = embedding ? 0.1 : 1.0 / std::sqrt(static_cast<double>(b.rows));
    std::normal_distribution<double> nd(0.0, sd);
    for (auto& x : v) x = nd(rng);
  }
}

void CatrModel::layout() {
  blocks_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), offset, rows, cols});
    offset += blocks_.back().size();
  };
  const int d = cfg_.d, da = cfg_.d_a, dh = cfg_.d_h;
  add("item_emb", cfg_.n_items + 1, d);
  add("user_emb", cfg_.n_users + 1, d);
  add("time_emb", cfg_.time_buckets, d);
  add("watch_emb", cfg_.watch_buckets, d);
  add("tod_emb", cfg_.tod_buckets, d);
  add("attn.q", d, da);
  add("attn.k", d, da);
  add("attn.v", d, da);
  for (ChannelId c : cfg_.roster) {
    const std::string n(channel_name(c));
    for (const auto* head : {"value", "calib", "uniq"}) {
      const int in = da + d + (std::string_view(head) == "calib" ? 1 : 0);
      const std::string p = fmt::format("{}.{}", head, n);
      add(p + ".w1", in, dh);
      add(p + ".b1", 1, dh);
      add(p + ".w2", dh, 1);
      add(p + ".b2", 1, 1);
    }
  }
  values_.assign(offset, 0.0);
}

const ParamBlock& CatrModel::block(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw ConfigError(fmt::format("unknown parameter block '{}'", name));
}

bool CatrModel::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

void CatrModel::round_to_float() {
  for (auto& x : values_) x = static_cast<double>(static_cast<float>(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---- forward ------------------------------------------------------------

namespace {

struct ChannelVars {
  Var base = 0;
  Var calibrated = 0;
  Var uniqueness = 0;
};

class Forward {
 public:
  Forward(const CatrModel& m, double* grad) : m_(m), grad_(grad) {}

  Var param(std::string_view name) {
    const auto& b = m_.block(name);
    return tape.parameter(m_.params().data() + b.offset, grad_ ? grad_ + b.offset : nullptr, b.rows, b.cols);
  }

  Var gather(std::string_view table, const std::vector<int>& rows) {
    const auto& b = m_.block(table);
    return tape.gather_rows(m_.params().data() + b.offset, grad_ ? grad_ + b.offset : nullptr, b.cols, rows);
  }

  Var embed_steps(const std::vector<SequenceStep>& steps) {
    std::vector<int> items, times, watches;
    for (const auto& s : steps) {
      items.push_back(m_.item_row(s.item));
      times.push_back(std::clamp(s.time_bucket, 0, m_.config().time_buckets - 1));
      watches.push_back(std::clamp(s.watch_bucket, 0, m_.config().watch_buckets - 1));
    }
    return tape.add(tape.add(gather("item_emb", items), gather("time_emb", times)), gather("watch_emb", watches));
  }

  Var mlp(Var x, const std::string& prefix) {
    const Var h = tape.tanh(tape.add_row(tape.matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
    return tape.add_row(tape.matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
  }

  // Builds the graph for every trigger of one request.
  void run(const RequestFeatures& f) {
    const auto& cfg = m_.config();
    const int T = static_cast<int>(f.triggers.size());
    Var attended;
    // Residual path: the trigger's own projected embedding is always present.
    const Var ht = embed_steps(f.triggers);
    const Var wv = param("attn.v");
    attended = tape.matmul(ht, wv);
    if (!f.sequence.empty()) {
      const Var x = embed_steps(f.sequence);
      const Var q = tape.matmul(ht, param("attn.q"));
      const Var k = tape.matmul(x, param("attn.k"));
      const Var v = tape.matmul(x, wv);
      const Var s = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(cfg.d_a)));
      const std::vector<std::uint8_t> mask(f.sequence.size(), 1);
      attended = tape.add(attended, tape.matmul(tape.masked_softmax_rows(s, mask), v));
    }
    const Var hu = tape.add(gather("user_emb", {m_.user_row(f.user)}),
                            gather("tod_emb", {std::clamp(f.tod_bucket, 0, cfg.tod_buckets - 1)}));
    const Var z = tape.concat_cols(attended, tape.broadcast_rows(hu, T));

    channels.clear();
    for (ChannelId c : cfg.roster) {
      const std::string n(channel_name(c));
      ChannelVars cv;
      cv.base = tape.sigmoid(mlp(z, "value." + n));
      if (cfg.use_calibrator) {
        const Var q = mlp(tape.concat_cols(z, cv.base), "calib." + n);
        cv.calibrated = tape.clip(tape.add(cv.base, tape.scale(tape.tanh(q), cfg.beta)), 0.0, 1.0);
      } else {
        cv.calibrated = cv.base;
      }
      cv.uniqueness = tape.sigmoid(mlp(z, "uniq." + n));
      channels.push_back(cv);
    }
  }

  Tape tape;
  std::vector<ChannelVars> channels;

 private:
  const CatrModel& m_;
  double* grad_;
};

}  // namespace

std::vector<TriggerPrediction> predict(const CatrModel& model, const RequestFeatures& features) {
  std::vector<TriggerPrediction> out;
  if (features.triggers.empty()) return out;
  Forward fw(model, nullptr);
  fw.run(features);
  const auto R = model.config().roster.size();
  out.resize(features.triggers.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].item = features.triggers[t].item;
    out[t].channels.resize(R);
    for (std::size_t k = 0; k < R; ++k) {
      out[t].channels[k] = {fw.tape.value(fw.channels[k].base)[t], fw.tape.value(fw.channels[k].calibrated)[t],
                            fw.tape.value(fw.channels[k].uniqueness)[t]};
    }
  }
  return out;
}

LossBreakdown batch_loss(const CatrModel& model, std::span<const TrainingRequest> batch,
                         const LossWeights& weights, std::vector<double>* grad) {
  LossBreakdown out;
  const auto R = model.config().roster.size();
  for (const auto& r : batch) out.examples += r.features.triggers.size();
  if (out.examples == 0) return out;
  if (grad && grad->size() != model.parameter_count()) grad->assign(model.parameter_count(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(out.examples);

  std::vector<double> y, w_val, cal_t, w_cal, yu;
  for (const auto& r : batch) {
    const auto T = r.features.triggers.size();
    if (T == 0) continue;
    if (r.targets.size() != T * R) throw ConfigError("training request targets do not match its triggers");
    Forward fw(model, grad ? grad->data() : nullptr);
    fw.run(r.features);
    auto& tape = fw.tape;
    Var total = tape.zeros(1, 1);
    for (std::size_t k = 0; k < R; ++k) {
      y.resize(T), w_val.resize(T), cal_t.resize(T), w_cal.resize(T), yu.resize(T);
      for (std::size_t t = 0; t < T; ++t) {
        const auto& g = r.targets[t * R + k];
        y[t] = g.value_label;
        w_val[t] = 1.0 + g.intensity;
        cal_t[t] = g.intensity / g.cap;
        w_cal[t] = 1.0 + sigmoid(g.intensity);
        yu[t] = g.uniqueness_label;
      }
      const auto& cv = fw.channels[k];
      const Var lv = tape.weighted_bce(cv.calibrated, y, w_val, kProbabilityClamp, &out.clamps);
      const Var lc = tape.weighted_sq_error(cv.calibrated, cal_t, w_cal);
      const Var ld = tape.weighted_bce(cv.uniqueness, yu, w_val, kProbabilityClamp, &out.clamps);
      out.value += tape.scalar(lv);
      out.calibration += tape.scalar(lc);
      out.diversity += tape.scalar(ld);
      total = tape.add(total, lv);
      if (weights.lambda != 0.0) total = tape.add(total, tape.scale(lc, weights.lambda));
      if (weights.mu != 0.0) total = tape.add(total, tape.scale(ld, weights.mu));
    }
    if (grad) tape.backward(tape.scale(total, inv_n));
  }
  out.value *= inv_n;
  out.calibration *= inv_n;
  out.diversity *= inv_n;
  out.weighted_calibration = weights.lambda * out.calibration;
  out.weighted_diversity = weights.mu * out.diversity;
  out.total = out.value + out.weighted_calibration + out.weighted_diversity;
  return out;
}

GradientCheckReport gradient_check(CatrModel& model, std::span<const TrainingRequest> batch,
                                   const LossWeights& weights, double h, double tol,
                                   const GradientHook& hook) {
  GradientCheckReport report;
  std::size_t examples = 0;
  for (const auto& r : batch) examples += r.features.triggers.size();
  if (examples == 0) return report;

  std::vector<double> analytic(model.parameter_count(), 0.0);
  batch_loss(model, batch, weights, &analytic);
  if (hook) hook(model, analytic);

  auto params = model.params();
  for (const auto& b : model.blocks()) {
    BlockCheck bc{b.name, 0.0, true};
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const double up = batch_loss(model, batch, weights).total;
      params[i] = saved - h;
      const double down = batch_loss(model, batch, weights).total;
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
      bc.max_rel_error = std::max(bc.max_rel_error, std::abs(a - numeric) / denom);
    }
    bc.pass = bc.max_rel_error <= tol;
    report.pass = report.pass && bc.pass;
    report.blocks.push_back(std::move(bc));
  }
  return report;
}

// ---- checkpoint ---------------------------------------------------------

namespace {

std::string roster_string(const std::vector<ChannelId>& roster) {
  std::string s;
  for (ChannelId c : roster) {
    if (!s.empty()) s += ',';
    s += channel_name(c);
  }
  return s;
}

}  // namespace

std::string serialize_checkpoint(const CatrModel& model) {
  const auto& c = model.config();
  std::string out = fmt::format(
      "{}\nd={} d_a={} d_h={} L={} items={} users={} time_buckets={} watch_buckets={} tod_buckets={} "
      "beta={} calibrator={} channels={}\n",
      kCheckpointHeader, c.d, c.d_a, c.d_h, c.seq_len, c.n_items, c.n_users, c.time_buckets, c.watch_buckets,
      c.tod_buckets, c.beta, c.use_calibrator ? 1 : 0, roster_string(c.roster));
  for (const auto& b : model.blocks()) {
    out += fmt::format("block {} {} {}\n", b.name, b.rows, b.cols);
    for (double x : model.view(b)) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((u >> s) & 0xffu));
    }
    out.push_back('\n');
  }
  return out;
}

CatrModel parse_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw IoError("checkpoint: truncated header");
    const auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kCheckpointHeader) throw IoError("checkpoint: bad magic");
  ModelConfig cfg;
  for (auto field : split_fields(next_line(), ' ')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) throw IoError(fmt::format("checkpoint: bad field '{}'", field));
    const auto key = field.substr(0, eq);
    const auto val = field.substr(eq + 1);
    if (key == "d") cfg.d = parse_number<int>(val);
    else if (key == "d_a") cfg.d_a = parse_number<int>(val);
    else if (key == "d_h") cfg.d_h = parse_number<int>(val);
    else if (key == "L") cfg.seq_len = parse_number<int>(val);
    else if (key == "items") cfg.n_items = parse_number<int>(val);
    else if (key == "users") cfg.n_users = parse_number<int>(val);
    else if (key == "time_buckets") cfg.time_buckets = parse_number<int>(val);
    else if (key == "watch_buckets") cfg.watch_buckets = parse_number<int>(val);
    else if (key == "tod_buckets") cfg.tod_buckets = parse_number<int>(val);
    else if (key == "beta") cfg.beta = parse_number<double>(val);
    else if (key == "calibrator") cfg.use_calibrator = parse_number<int>(val) != 0;
    else if (key == "channels") {
      cfg.roster.clear();
      for (auto n : split_fields(val, ',')) {
        const auto ch = parse_channel(n);
        if (!ch) throw IoError(fmt::format("checkpoint: unknown channel '{}'", n));
        cfg.roster.push_back(*ch);
      }
    } else {
      throw IoError(fmt::format("checkpoint: unknown key '{}'", key));
    }
  }
  CatrModel model(cfg, 0);
  auto params = model.params();
  for (const auto& b : model.blocks()) {
    const auto expect = fmt::format("block {} {} {}", b.name, b.rows, b.cols);
    if (next_line() != expect) throw IoError(fmt::format("checkpoint: expected '{}'", expect));
    const auto n = b.size() * 4;
    if (pos + n + 1 > bytes.size() || bytes[pos + n] != '\n')
      throw IoError(fmt::format("checkpoint: block {} truncated", b.name));
    for (std::size_t i = 0; i < b.size(); ++i) {
      std::uint32_t u = 0;
      for (int s = 0; s < 4; ++s)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i * 4 + s])) << (8 * s);
      params[b.offset + i] = static_cast<double>(std::bit_cast<float>(u));
    }
    pos += n + 1;
  }
  if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  if (!model.all_finite()) throw NumericalError("checkpoint: non-finite parameter");
  return model;
}

void write_checkpoint(const CatrModel& model, const std::filesystem::path& path) {
  TextWriter w(path);
  w.raw(serialize_checkpoint(model));
  w.close();
}

CatrModel read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

std::string checkpoint_hash(const CatrModel& model) { return hex64(fnv1a64(serialize_checkpoint(model))); }

}  // namespace capts
