// capts: command-line driver for the trigger routing pipeline.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capts/workspace.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::vector<int> k_grid;
  std::optional<double> eta, lambda, mu, beta;
  std::optional<int> window_size;
  std::vector<std::string> methods;
  std::vector<int> windows;
  bool verbose = false;
};

capts::RunConfig resolve(const Overrides& o) {
  capts::RunConfig cfg;
  if (!o.config_path.empty()) cfg = capts::load_run_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.k_grid.empty()) cfg.eval.k_grid = o.k_grid;
  if (o.eta) cfg.routing.eta = *o.eta;
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.mu) cfg.train.mu = *o.mu;
  if (o.beta) cfg.train.beta = *o.beta;
  if (o.window_size) cfg.vam.window_size = *o.window_size;
  if (!o.methods.empty()) cfg.eval.methods = o.methods;
  if (const char* env = std::getenv("CAPTS_DATA_DIR"); env && *env) cfg.data_root = env;
  cfg.validate();
  return cfg;
}

int run(const std::string& command, const Overrides& o) {
  const auto cfg = resolve(o);
  const capts::Workspace ws(cfg, cfg.seed, cfg.data_root, o.force);
  spdlog::info("{}: run directory {}", command, ws.dir().string());

  if (command == "gen-data") {
    capts::stage_gen_data(ws);
  } else if (command == "build-indexes") {
    capts::stage_build_indexes(ws);
  } else if (command == "audit-leakage") {
    const auto rep = capts::stage_audit_leakage(ws);
    fmt::print("leakage audit: {} ({} replays, {} violations, {} snapshots checked, {} mismatched)\n",
               rep.pass() ? "PASS" : "FAIL", rep.replays, rep.violations, rep.checked, rep.mismatched);
    if (!rep.pass()) return kNumerical;
  } else if (command == "build-supervision") {
    capts::stage_build_supervision(ws);
  } else if (command == "train") {
    capts::stage_train(ws);
  } else if (command == "eval") {
    fmt::print("{}", capts::format_summary(capts::stage_eval(ws, cfg.eval.methods)));
  } else if (command == "ablate") {
    for (const auto& v : capts::stage_ablate(ws))
      fmt::print("== {}\n{}\n", v.variant.name, capts::format_summary(v.report));
  } else if (command == "sweep") {
    const auto windows = o.windows.empty() ? cfg.sweep_windows : o.windows;
    for (const auto& p : capts::stage_sweep(ws, windows)) {
      fmt::print("w_s={} ({:.0f}s):", p.window_size, p.seconds);
      for (int k : cfg.eval.k_grid) fmt::print(" R@{}={:.4f}", k, p.report.row("capts", k)->union_recall);
      fmt::print("\n");
    }
  } else if (command == "run") {
    capts::stage_run(ws);
    std::cout << std::ifstream(ws.report("summary.txt")).rdbuf();
  }
  fmt::print("{}\n", ws.dir().string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-adaptive trigger routing: data, indexes, supervision, training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "top-level seed");
  app.add_flag("--force", o.force, "overwrite existing outputs of this command");
  app.add_option("--k-grid", o.k_grid, "comma-separated K values")->delimiter(',');
  app.add_option("--eta", o.eta, "uniqueness weight in the routing score");
  app.add_option("--lambda", o.lambda, "calibration loss weight");
  app.add_option("--mu", o.mu, "diversity loss weight");
  app.add_option("--beta", o.beta, "calibrator correction bound");
  app.add_option("--window-size", o.window_size, "future window length w_s");
  app.add_option("--methods", o.methods, "comma-separated methods (capts,recent,tagtop,ltv,nic)")->delimiter(',');
  app.add_flag("-v,--verbose", o.verbose, "debug logging");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate the synthetic event log and catalog"},
      {"build-indexes", "build daily I2I snapshots for every channel"},
      {"audit-leakage", "replay a full evaluation and rebuild each consulted snapshot from the truncated log"},
      {"build-supervision", "value attribution labels for the training requests"},
      {"train", "train the routing model"},
      {"eval", "evaluate the model and the baselines on held-out requests"},
      {"ablate", "train and evaluate the full model, w/o Div and w/o Cal"},
      {"sweep", "window size sensitivity"},
      {"run", "gen-data through eval plus the leakage audit"},
  };
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    if (name == "sweep") sub->add_option("--windows", o.windows, "comma-separated window sizes")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const capts::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const capts::IoError& e) {
    spdlog::error("io: {}", e.what());
    return kIo;
  } catch (const capts::ReplayUnavailable& e) {
    spdlog::error("io: {}", e.what());
    return kIo;
  } catch (const capts::NumericalError& e) {
    spdlog::error("numerical: {}", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
}
