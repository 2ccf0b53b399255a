#include "capts/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capts/text_io.hpp"

namespace capts {

namespace {

const UserHistory& user_of(const Corpus& corpus, UserId u) {
  const auto it = std::lower_bound(corpus.users.begin(), corpus.users.end(), u,
                                   [](const UserHistory& h, UserId id) { return h.user < id; });
  if (it == corpus.users.end() || it->user != u) throw ConfigError(fmt::format("unknown user {}", u));
  return *it;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - t_).count();
    t_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point t_ = std::chrono::steady_clock::now();
};

}  // namespace

PreparedData prepare_data(Corpus corpus, const EvalConfig& eval, double threshold) {
  PreparedData d;
  d.train_corpus.catalog = corpus.catalog;
  for (const auto& h : corpus.users) {
    UserHistory train{h.user, {}};
    auto req = build_eval_instance(h, eval.test_views, threshold);
    if (!req) {
      ++d.skipped_short_history;
      train.events = h.events;
    } else {
      train.events.assign(h.events.begin(), h.events.begin() + static_cast<std::ptrdiff_t>(req->prefix_len));
      if (req->future_window.empty()) ++d.skipped_empty_window;
      else d.eval_requests.push_back(std::move(*req));
    }
    d.train_corpus.users.push_back(std::move(train));
  }
  std::sort(d.eval_requests.begin(), d.eval_requests.end(),
            [](const auto& a, const auto& b) { return a.request_id < b.request_id; });
  d.corpus = std::move(corpus);
  return d;
}

void PreparedData::annotate(EvalReport& report) const {
  report.skipped_empty_window = skipped_empty_window;
  report.skipped_short_history = skipped_short_history;
  report.skipped_no_snapshot = skipped_no_snapshot;
}

void drop_unreplayable(PreparedData& data, const SnapshotStore& store, const std::vector<ChannelId>& roster,
                       EpochSeconds delta) {
  const auto keep = [&](const RequestInstance& r) {
    return std::all_of(roster.begin(), roster.end(), [&](ChannelId c) { return store.select(c, r.tau0, delta); });
  };
  const auto it = std::stable_partition(data.eval_requests.begin(), data.eval_requests.end(), keep);
  data.skipped_no_snapshot += static_cast<std::size_t>(data.eval_requests.end() - it);
  data.eval_requests.erase(it, data.eval_requests.end());
}

SupervisionSet build_training_supervision(const PreparedData& data, const SnapshotStore& store, VamConfig& vam,
                                          const std::vector<ChannelId>& roster, EpochSeconds delta,
                                          bool calibrate, ReplayAudit* audit) {
  std::vector<RequestInstance> requests;
  for (const auto& h : data.train_corpus.users) {
    auto rs = build_request_instances(h, vam.window_size, vam.stride, vam.effective_view_seconds);
    for (auto& r : rs)
      if (!r.eligible_triggers.empty()) requests.push_back(std::move(r));
  }
  auto set = build_supervision(requests, store, vam, roster, delta, audit);
  if (calibrate) calibrate_thresholds(set.records, vam);
  return set;
}

std::vector<RequestRef> request_refs(const SupervisionSet& set) {
  std::vector<RequestRef> out;
  for (const auto& r : set.requests) out.push_back({r.request_id, r.user, r.tau0, r.prefix_len});
  return out;
}

Variant full_variant(const RunConfig& cfg) {
  return {"capts", cfg.train.lambda, cfg.train.mu, cfg.routing.eta, cfg.train.use_calibrator};
}

std::vector<Variant> ablation_variants(const RunConfig& cfg) {
  auto full = full_variant(cfg);
  auto no_div = full;
  no_div.name = "wo_div";
  no_div.mu = 0.0;
  no_div.eta = 0.0;
  auto no_cal = full;
  no_cal.name = "wo_cal";
  no_cal.lambda = 0.0;
  no_cal.use_calibrator = false;
  return {full, no_div, no_cal};
}

CatrModel train_variant(const PreparedData& data, std::span<const TrainingRequest> training, const RunConfig& cfg,
                        const Variant& v, std::uint64_t seed, TrainReport* report) {
  TrainConfig tc = cfg.train;
  tc.lambda = v.lambda;
  tc.mu = v.mu;
  tc.use_calibrator = v.use_calibrator;
  tc.seed = derive_seed(seed, "train");
  const auto mc = tc.model_config(static_cast<int>(data.corpus.catalog.size()),
                                  static_cast<int>(data.corpus.users.empty() ? 0 : data.corpus.users.back().user + 1),
                                  cfg.roster());
  return train_model(training, mc, tc, report);
}

RoutingAssignment capts_assignment(const CatrModel& model, const UserHistory& h, const RequestInstance& req,
                                   const RunConfig& cfg, double eta) {
  const auto cands = candidate_triggers(req, cfg.vam.max_candidates);
  const auto features =
      build_features(h, req.prefix_len, req.tau0, cands, model.config().seq_len, cfg.vam.effective_view_seconds);
  RoutingConfig rc = cfg.routing;
  rc.eta = eta;
  return route_predictions(predict(model, features), model.config().roster, rc);
}

std::map<std::string, std::vector<RequestMetrics>> evaluate_methods(
    const PreparedData& data, const SnapshotStore& store, const CatrModel* model, const RunConfig& cfg,
    const std::vector<std::string>& methods, double eta, ReplayAudit* audit,
    std::vector<AssignmentRecord>* assignments) {
  std::map<std::string, std::vector<RequestMetrics>> out;
  const auto& roster = cfg.roster();
  const double thr = cfg.vam.effective_view_seconds;
  const int n_base = cfg.routing.max_budget();
  const auto& reqs = data.eval_requests;
  for (const auto& method : methods) {
    if (method != "capts" && method != "recent" && method != "tagtop" && method != "ltv" && method != "nic")
      throw ConfigError(fmt::format("unknown method '{}'", method));
    if (method == "capts" && !model) throw ConfigError("method 'capts' needs a trained model");
    std::vector<RequestMetrics> metrics(reqs.size());
    std::vector<RoutingAssignment> routed(reqs.size());
    const auto n = static_cast<std::ptrdiff_t>(reqs.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
      const auto& req = reqs[static_cast<std::size_t>(i)];
      const auto& h = user_of(data.corpus, req.user);
      const auto& cat = data.corpus.catalog;
      RoutingAssignment a;
      if (method == "capts") {
        a = capts_assignment(*model, h, req, cfg, eta);
      } else {
        std::vector<ItemId> list;
        if (method == "recent") list = baseline_recent(h, req.prefix_len, n_base, thr);
        else if (method == "tagtop") list = baseline_tagtop(h, req.prefix_len, cat, n_base, thr);
        else if (method == "ltv") list = baseline_ltv(h, req.prefix_len, cat, n_base, thr);
        else if (method == "nic")
          list = baseline_nic(h, req.prefix_len, cat, n_base, cfg.routing.nic_rise_factor,
                              cfg.routing.nic_recent_fraction, thr);
        a = shared_assignment(list, roster, cfg.routing);
      }
      metrics[static_cast<std::size_t>(i)] =
          score_assignment(a, store, req, cfg.eval.k_grid, cfg.eval.epsilon, cfg.replay_delta, audit);
      if (assignments) routed[static_cast<std::size_t>(i)] = std::move(a);
      } catch (...) {
#pragma omp critical(capts_eval_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    if (assignments)
      for (std::size_t i = 0; i < reqs.size(); ++i)
        assignments->push_back({reqs[i].request_id, method, std::move(routed[i])});
    out[method] = std::move(metrics);
  }
  return out;
}

void write_assignments(std::span<const AssignmentRecord> records, const std::filesystem::path& path) {
  TextWriter w(path);
  w.line("request_id method channel triggers(item:score)");
  for (const auto& r : records) {
    for (std::size_t k = 0; k < r.assignment.roster.size(); ++k) {
      std::string line = fmt::format("{} {} {}", r.request_id, r.method, channel_name(r.assignment.roster[k]));
      for (const auto& t : r.assignment.selected[k]) line += fmt::format(" {}:{:.6f}", t.item, t.score);
      w.line(line);
    }
  }
  w.close();
}

LeakageReport audit_leakage(const Corpus& corpus, const SnapshotStore& store, const ReplayAudit& audit,
                            const SnapshotConfig& cfg) {
  LeakageReport rep;
  rep.replays = audit.replays();
  rep.violations = audit.violations();
  for (const auto& [channel, as_of] : audit.consulted()) {
    const IndexSnapshot* stored = nullptr;
    for (const auto& s : store.snapshots(channel))
      if (s->as_of == as_of) stored = s.get();
    ++rep.checked;
    if (!stored) {
      ++rep.mismatched;
      continue;
    }
    const auto rebuilt = build_snapshot(channel, truncate_corpus(corpus, as_of), as_of, cfg);
    if (serialize_snapshot(rebuilt) != serialize_snapshot(*stored)) {
      spdlog::error("leakage audit: {} snapshot at {} differs from its truncated rebuild", channel_name(channel),
                    as_of);
      ++rep.mismatched;
    }
  }
  return rep;
}

// ---- end-to-end ---------------------------------------------------------

SnapshotConfig snapshot_config_for(const RunConfig& cfg, std::uint64_t seed) {
  auto sc = cfg.snapshots;
  sc.embedding.seed = derive_seed(seed, "embedding");
  return sc;
}

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const SeedOptions& opts) {
  SeedResult res;
  res.seed = seed;
  Stopwatch sw;
  auto gen = generate_synthetic_corpus(cfg.generator, derive_seed(seed, "generator"));
  res.seconds["generate"] = sw.lap();

  auto data = prepare_data(std::move(gen.corpus), cfg.eval, cfg.vam.effective_view_seconds);
  const auto sc = snapshot_config_for(cfg, seed);
  const auto store = build_snapshot_store(data.corpus, sc);
  drop_unreplayable(data, store, cfg.roster(), cfg.replay_delta);
  res.seconds["indexes"] = sw.lap();

  res.calibrated = cfg.vam;
  const auto sup = build_training_supervision(data, store, res.calibrated, cfg.roster(), cfg.replay_delta,
                                              cfg.calibrate_gamma);
  res.supervision_records = sup.records.size();
  res.supervision_requests = sup.requests.size();
  res.supervision_skipped = sup.skipped;
  const auto refs = request_refs(sup);
  const auto training =
      build_training_requests(data.train_corpus, refs, sup.records, res.calibrated, cfg.roster(), cfg.train.seq_len);
  res.seconds["supervision"] = sw.lap();

  ReplayAudit audit;
  bool first = true;
  for (const auto& v : opts.variants) {
    VariantResult vr;
    vr.variant = v;
    const auto model = train_variant(data, training, cfg, v, seed, &vr.train);
    res.seconds["train." + v.name] = sw.lap();
    std::vector<std::string> methods = {"capts"};
    if (first && opts.baselines)
      for (const auto& m : cfg.eval.methods)
        if (m != "capts") methods.push_back(m);
    vr.metrics = evaluate_methods(data, store, &model, cfg, methods, v.eta, &audit);
    vr.report = summarize(cfg.roster(), cfg.eval.k_grid, vr.metrics, "capts");
    data.annotate(vr.report);
    res.seconds["eval." + v.name] = sw.lap();
    res.variants.push_back(std::move(vr));
    first = false;
  }
  if (opts.leakage_audit) {
    res.leakage = audit_leakage(data.corpus, store, audit, sc);
    res.seconds["leakage_audit"] = sw.lap();
  }
  return res;
}

std::vector<SweepPoint> window_sweep(const RunConfig& cfg, std::uint64_t seed, const std::vector<int>& windows) {
  auto gen = generate_synthetic_corpus(cfg.generator, derive_seed(seed, "generator"));
  auto data = prepare_data(std::move(gen.corpus), cfg.eval, cfg.vam.effective_view_seconds);
  const auto store = build_snapshot_store(data.corpus, snapshot_config_for(cfg, seed));
  drop_unreplayable(data, store, cfg.roster(), cfg.replay_delta);
  return window_sweep(cfg, data, store, seed, windows);
}

std::vector<SweepPoint> window_sweep(const RunConfig& cfg, const PreparedData& data, const SnapshotStore& store,
                                     std::uint64_t seed, const std::vector<int>& windows) {
  std::vector<SweepPoint> out;
  for (int w : windows) {
    Stopwatch sw;
    auto vam = cfg.vam;
    vam.window_size = w;
    const auto sup = build_training_supervision(data, store, vam, cfg.roster(), cfg.replay_delta, cfg.calibrate_gamma);
    const auto refs = request_refs(sup);
    const auto training =
        build_training_requests(data.train_corpus, refs, sup.records, vam, cfg.roster(), cfg.train.seq_len);
    const auto v = full_variant(cfg);
    const auto model = train_variant(data, training, cfg, v, seed);
    const auto metrics = evaluate_methods(data, store, &model, cfg, {"capts"}, v.eta);
    SweepPoint p;
    p.window_size = w;
    p.report = summarize(cfg.roster(), cfg.eval.k_grid, metrics, "capts");
    data.annotate(p.report);
    p.seconds = sw.lap();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace capts
