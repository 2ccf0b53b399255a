#include "capts/workspace.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "capts/text_io.hpp"

namespace capts {

namespace fs = std::filesystem;
using nlohmann::json;

Workspace::Workspace(RunConfig cfg, std::uint64_t seed, const fs::path& data_root, bool force)
    : cfg_(std::move(cfg)), seed_(seed), force_(force) {
  cfg_.validate();
  dir_ = data_root / fmt::format("{}-{}", config_hash(cfg_), seed_);
}

fs::path Workspace::pick(const std::string& override_path, const std::string& fallback) const {
  return override_path.empty() ? dir_ / fallback : fs::path(override_path);
}

fs::path Workspace::events() const { return pick(cfg_.paths.events, "events.csv"); }
fs::path Workspace::catalog() const { return pick(cfg_.paths.catalog, "catalog.csv"); }
fs::path Workspace::snapshots() const { return pick(cfg_.paths.snapshots, "snapshots"); }
fs::path Workspace::supervision() const { return pick(cfg_.paths.supervision, "supervision.tsv"); }
fs::path Workspace::requests() const {
  auto p = supervision();
  p.replace_extension(".requests.tsv");
  return p;
}
fs::path Workspace::checkpoint() const { return pick(cfg_.paths.checkpoint, "model.ckpt"); }
fs::path Workspace::reports() const { return pick(cfg_.paths.reports, "reports"); }

namespace {

bool present(const fs::path& p) {
  std::error_code ec;
  if (fs::is_directory(p, ec)) return !fs::is_empty(p, ec);
  return fs::exists(p, ec);
}

void write_json(const json& j, const fs::path& path) {
  TextWriter w(path);
  w.line(j.dump(2));
  w.close();
}

void write_text(const std::string& s, const fs::path& path) {
  TextWriter w(path);
  w.raw(s);
  w.close();
}

// Writes config.json next to the outputs so a run directory is self-describing.
void record_config(const Workspace& ws) {
  const auto p = ws.dir() / "config.json";
  if (!fs::exists(p)) save_run_config(ws.config(), p);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_corpus(const Workspace& ws) {
  if (!present(ws.events()) || !present(ws.catalog())) stage_gen_data(ws);
}
void ensure_indexes(const Workspace& ws) {
  if (!present(ws.snapshots())) stage_build_indexes(ws);
}
void ensure_supervision(const Workspace& ws) {
  if (!present(ws.supervision()) || !present(ws.requests())) stage_build_supervision(ws);
}
void ensure_checkpoint(const Workspace& ws) {
  if (!present(ws.checkpoint())) stage_train(ws);
}

PreparedData load_prepared(const Workspace& ws, const SnapshotStore& store) {
  const auto& cfg = ws.config();
  auto data = prepare_data(load_corpus(ws), cfg.eval, cfg.vam.effective_view_seconds);
  drop_unreplayable(data, store, cfg.roster(), cfg.replay_delta);
  return data;
}

std::vector<TrainingRequest> load_training(const Workspace& ws, const PreparedData& data, VamConfig* vam) {
  const auto& cfg = ws.config();
  auto file = read_supervision(ws.supervision(), ws.requests());
  if (vam) *vam = file.config;
  return build_training_requests(data.train_corpus, file.requests, file.records, file.config, cfg.roster(),
                                 cfg.train.seq_len);
}

std::string reference_of(const std::vector<std::string>& methods) {
  if (methods.empty()) throw ConfigError("no evaluation methods given");
  return std::find(methods.begin(), methods.end(), "capts") != methods.end() ? "capts" : methods.front();
}

}  // namespace

void Workspace::claim(const fs::path& p) const {
  if (!present(p)) return;
  if (!force_) throw OutputExists(fmt::format("{} already exists; pass --force to overwrite", p.string()));
  std::error_code ec;
  fs::remove_all(p, ec);
  if (ec) throw IoError(fmt::format("cannot remove {}: {}", p.string(), ec.message()));
}

Corpus load_corpus(const Workspace& ws) {
  auto corpus = read_corpus(ws.events(), ws.catalog());
  validate_corpus(corpus);
  return corpus;
}

SnapshotStore load_snapshot_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("snapshot directory {} not found", dir.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".snap") files.push_back(e.path());
  std::vector<std::shared_ptr<const IndexSnapshot>> snaps(files.size());
  const auto n = static_cast<std::ptrdiff_t>(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    snaps[static_cast<std::size_t>(i)] = std::make_shared<const IndexSnapshot>(read_snapshot(files[static_cast<std::size_t>(i)]));
  std::sort(snaps.begin(), snaps.end(), [](const auto& a, const auto& b) {
    return a->channel != b->channel ? a->channel < b->channel : a->as_of < b->as_of;
  });
  SnapshotStore store;
  for (auto& s : snaps) store.add(std::move(s));
  return store;
}

CatrModel load_checkpoint(const Workspace& ws) { return read_checkpoint(ws.checkpoint()); }

void stage_gen_data(const Workspace& ws) {
  ws.claim(ws.events());
  ws.claim(ws.catalog());
  record_config(ws);
  const auto t0 = std::chrono::steady_clock::now();
  const auto gen = generate_synthetic_corpus(ws.config().generator, derive_seed(ws.seed(), "generator"));
  write_event_log(gen.corpus, ws.events());
  write_catalog(gen.corpus.catalog, ws.catalog());
  std::size_t n = 0;
  for (const auto& h : gen.corpus.users) n += h.events.size();
  spdlog::info("gen-data: {} users, {} items, {} interactions in {:.1f}s -> {}", gen.corpus.users.size(),
               gen.corpus.catalog.size(), n, seconds_since(t0), ws.dir().string());
}

void stage_build_indexes(const Workspace& ws) {
  ensure_corpus(ws);
  ws.claim(ws.snapshots());
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = load_corpus(ws);
  const auto store = build_snapshot_store(corpus, snapshot_config_for(ws.config(), ws.seed()));
  fs::create_directories(ws.snapshots());
  for (ChannelId c : store.channels())
    for (const auto& s : store.snapshots(c)) write_snapshot(*s, ws.snapshots() / snapshot_filename(c, s->as_of));
  spdlog::info("build-indexes: {} snapshots in {:.1f}s", store.size(), seconds_since(t0));
}

void stage_build_supervision(const Workspace& ws) {
  ensure_indexes(ws);
  ws.claim(ws.supervision());
  ws.claim(ws.requests());
  const auto& cfg = ws.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  VamConfig vam = cfg.vam;
  const auto set = build_training_supervision(data, store, vam, cfg.roster(), cfg.replay_delta, cfg.calibrate_gamma);
  write_supervision(set, vam, ws.supervision(), ws.requests());

  const auto rates = positive_rates(set.records);
  json rep{{"records", set.records.size()}, {"requests", set.requests.size()}, {"skipped", set.skipped}};
  for (ChannelId c : cfg.roster()) {
    const auto i = static_cast<std::size_t>(c);
    rep["channels"][std::string(channel_name(c))] = {{"gamma", vam.params(c).gamma}, {"positive_rate", rates[i]}};
  }
  write_json(rep, ws.report("supervision.json"));
  spdlog::info("build-supervision: {} records over {} requests ({} skipped) in {:.1f}s", set.records.size(),
               set.requests.size(), set.skipped, seconds_since(t0));
}

void stage_train(const Workspace& ws) {
  ensure_supervision(ws);
  ws.claim(ws.checkpoint());
  const auto& cfg = ws.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  const auto training = load_training(ws, data, nullptr);
  TrainReport report;
  const auto model = train_variant(data, training, cfg, full_variant(cfg), ws.seed(), &report);
  write_checkpoint(model, ws.checkpoint());
  write_train_report(report, ws.report("train.csv"));
  spdlog::info("train: {} requests, {} examples, final loss {:.5f} in {:.1f}s (checkpoint {})", report.requests,
               report.examples, report.epochs.empty() ? 0.0 : report.epochs.back().loss.total, seconds_since(t0),
               checkpoint_hash(model));
}

EvalReport stage_eval(const Workspace& ws, const std::vector<std::string>& methods) {
  const auto reference = reference_of(methods);
  const bool with_model = std::find(methods.begin(), methods.end(), "capts") != methods.end();
  if (with_model) ensure_checkpoint(ws);
  else ensure_indexes(ws);
  const auto metrics_path = ws.report("metrics.csv");
  ws.claim(metrics_path);
  const auto& cfg = ws.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  std::optional<CatrModel> model;
  if (with_model) model = load_checkpoint(ws);
  std::vector<AssignmentRecord> assignments;
  const auto per = evaluate_methods(data, store, model ? &*model : nullptr, cfg, methods, cfg.routing.eta, nullptr,
                                    &assignments);
  auto report = summarize(cfg.roster(), cfg.eval.k_grid, per, reference);
  data.annotate(report);
  write_metrics_csv(report, metrics_path);
  write_text(format_summary(report), ws.report("summary.txt"));
  write_assignments(assignments, ws.report("assignments.txt"));
  spdlog::info("eval: {} requests, {} methods in {:.1f}s", report.evaluated, methods.size(), seconds_since(t0));
  return report;
}

LeakageReport stage_audit_leakage(const Workspace& ws) {
  const bool with_model = present(ws.checkpoint());
  ensure_indexes(ws);
  const auto out = ws.report("leakage.json");
  ws.claim(out);
  const auto& cfg = ws.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  std::optional<CatrModel> model;
  std::vector<std::string> methods;
  for (const auto& m : cfg.eval.methods)
    if (m != "capts" || with_model) methods.push_back(m);
  if (with_model) model = load_checkpoint(ws);
  ReplayAudit audit;
  evaluate_methods(data, store, model ? &*model : nullptr, cfg, methods, cfg.routing.eta, &audit);
  const auto rep = audit_leakage(data.corpus, store, audit, snapshot_config_for(cfg, ws.seed()));
  write_json({{"replays", rep.replays},
              {"violations", rep.violations},
              {"snapshots_checked", rep.checked},
              {"snapshots_mismatched", rep.mismatched},
              {"methods", methods},
              {"pass", rep.pass()}},
             out);
  spdlog::info("audit-leakage: {} replays, {} violations, {}/{} snapshots reproduced in {:.1f}s", rep.replays,
               rep.violations, rep.checked - rep.mismatched, rep.checked, seconds_since(t0));
  return rep;
}

std::vector<VariantResult> stage_ablate(const Workspace& ws) {
  ensure_supervision(ws);
  const auto csv_path = ws.report("ablation.csv");
  ws.claim(csv_path);
  const auto& cfg = ws.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  const auto training = load_training(ws, data, nullptr);

  std::vector<VariantResult> out;
  std::string text;
  for (const auto& v : ablation_variants(cfg)) {
    VariantResult vr;
    vr.variant = v;
    const auto model = train_variant(data, training, cfg, v, ws.seed(), &vr.train);
    vr.metrics = evaluate_methods(data, store, &model, cfg, {"capts"}, v.eta);
    vr.report = summarize(cfg.roster(), cfg.eval.k_grid, vr.metrics, "capts");
    data.annotate(vr.report);
    text += fmt::format("== {} (lambda={}, mu={}, eta={}, calibrator={})\n{}\n", v.name, v.lambda, v.mu, v.eta,
                        v.use_calibrator ? "on" : "off", format_summary(vr.report));
    out.push_back(std::move(vr));
  }

  TextWriter w(csv_path);
  std::string header = kAblationHeaderPrefix;
  for (ChannelId c : cfg.roster()) header += fmt::format(",uniq_{}", channel_name(c));
  for (ChannelId c : cfg.roster()) header += fmt::format(",delta_uniq_{}", channel_name(c));
  w.line(header);
  for (const auto& vr : out) {
    for (int k : cfg.eval.k_grid) {
      const auto* row = vr.report.row("capts", k);
      const auto* base = out.front().report.row("capts", k);
      std::string line = fmt::format("{},{},{:.6f},{:.6f}", vr.variant.name, k, row->union_recall,
                                     row->union_recall - base->union_recall);
      for (double u : row->uniq) line += fmt::format(",{:.6f}", u);
      for (std::size_t i = 0; i < row->uniq.size(); ++i) line += fmt::format(",{:.6f}", row->uniq[i] - base->uniq[i]);
      w.line(line);
    }
  }
  w.close();
  write_text(text, ws.report("ablation.txt"));
  spdlog::info("ablate: {} variants in {:.1f}s", out.size(), seconds_since(t0));
  return out;
}

std::vector<SweepPoint> stage_sweep(const Workspace& ws, const std::vector<int>& windows) {
  if (windows.empty()) throw ConfigError("sweep needs at least one window size");
  ensure_indexes(ws);
  const auto csv_path = ws.report("sweep.csv");
  ws.claim(csv_path);
  const auto& cfg = ws.config();
  const auto store = load_snapshot_store(ws.snapshots());
  const auto data = load_prepared(ws, store);
  const auto points = window_sweep(cfg, data, store, ws.seed(), windows);
  TextWriter w(csv_path);
  w.line("window_size,k,union_recall,seconds");
  for (const auto& p : points)
    for (int k : cfg.eval.k_grid)
      w.line(fmt::format("{},{},{:.6f},{:.1f}", p.window_size, k, p.report.row("capts", k)->union_recall, p.seconds));
  w.close();
  return points;
}

void stage_run(const Workspace& ws) {
  stage_gen_data(ws);
  stage_build_indexes(ws);
  stage_build_supervision(ws);
  stage_train(ws);
  stage_eval(ws, ws.config().eval.methods);
  const auto leak = stage_audit_leakage(ws);
  if (!leak.pass()) throw NumericalError("leakage audit failed");
}

}  // namespace capts
