// CLI for dispatch and locational marginal emissions analysis.
//
// Exit codes: 0 ok, 1 usage, 2 invalid data, 3 solver failure,
//             4 degenerate LME point (soft failure; outputs still written).
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "lme/errors.hpp"
#include "lme/io.hpp"
#include "lme/scenario.hpp"

namespace {

using namespace lme;

void add_common_flags(CLI::App* cmd, ScenarioConfig& cfg, std::string& uc_mode) {
  cmd->add_option("--network", cfg.network_file, "network JSON file")->required();
  cmd->add_option("--demand", cfg.demand_file, "demand CSV file")->required();
  cmd->add_option("--horizon", [&cfg](const CLI::results_t& r) {
        cfg.horizon = std::stoi(r[0]);
        return true;
      },
      "override horizon for T=1 network files");
  cmd->add_option("--out", cfg.out_dir, "output directory for CSV/JSON files");
  cmd->add_option("--tol", cfg.tol, "KKT residual tolerance");
  cmd->add_option("--reg", cfg.reg, "quadratic regularization floor");
  cmd->add_option("--voll", cfg.voll, "value of lost load for slack generators");
  cmd->add_option("--seed", cfg.seed, "seed for the optional demand jitter");
  cmd->add_option("--uc-mode", uc_mode, "fixed | heuristic_rounding | exhaustive");
  cmd->add_option("--fd-eps", cfg.fd_eps, "finite-difference step (MW)");
  cmd->add_option("--day-len", cfg.day_len, "periods per day for RMS windows");
  cmd->add_option("--jitter", cfg.jitter, "demand jitter magnitude (MW), 0 = off");
  cmd->add_option("--smooth-window", cfg.smooth_window_fraction,
                  "rolling-mean window as a fraction of the horizon");
}

int run(const ScenarioConfig& cfg, bool print_summary) {
  ScenarioReport rep = run_scenario(cfg);
  if (print_summary) {
    std::printf("dispatch solved in %d iterations, %.3fs (residual %.2e)\n",
                rep.solver.iterations, rep.solver.wall_time_s,
                rep.solver.residuals.stationarity);
    std::printf("emissions total: %s tCO2\n", format_double(rep.emissions_total).c_str());
    if (rep.rms_mean_normalized)
      std::printf("static vs dynamic mean normalized RMS deviation: %s\n",
                  format_double(*rep.rms_mean_normalized).c_str());
    else if (!rep.metrics_note.empty())
      std::printf("rms deviation unavailable: %s\n", rep.metrics_note.c_str());
    if (rep.fd_max_rel_gap)
      std::printf("max relative FD/IFT gap: %s\n",
                  format_double(*rep.fd_max_rel_gap).c_str());
    if (rep.degenerate_dynamic || rep.degenerate_static)
      std::printf("warning: degenerate LME point flagged\n");
  }
  return rep.degenerate_dynamic || rep.degenerate_static ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic dispatch and locational marginal emissions"};
  app.require_subcommand(1);

  ScenarioConfig cfg;
  std::string uc_mode = "exhaustive";

  auto* c_validate = app.add_subcommand("validate", "check a network file");
  std::string net_file;
  c_validate->add_option("--network", net_file, "network JSON file")->required();

  auto* c_dispatch = app.add_subcommand("dispatch", "solve the dispatch problem");
  auto* c_lme = app.add_subcommand("lme", "dispatch + dynamic LMEs");
  auto* c_static = app.add_subcommand("static-lme", "dispatch + static-approximation LMEs");
  auto* c_compare = app.add_subcommand("compare", "dynamic vs static LMEs + RMS metrics");
  auto* c_fd = app.add_subcommand("fd-check", "validate LMEs against finite differences");
  auto* c_report = app.add_subcommand("report", "full report: LMEs, static, metrics");
  for (CLI::App* cmd : {c_dispatch, c_lme, c_static, c_compare, c_fd, c_report})
    add_common_flags(cmd, cfg, uc_mode);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help exits 0, any parse failure is usage error
  }

  try {
    if (c_validate->parsed()) {
      Network net = load_network(net_file);
      ValidationReport rep = validate_network(net);
      if (rep.ok()) {
        std::printf("ok: %d nodes, %d lines, %d devices, T=%d\n", net.n_nodes,
                    net.n_lines(), net.n_devices(), net.horizon);
        return 0;
      }
      std::fputs(rep.to_string().c_str(), stderr);
      return 2;
    }
    cfg.uc_mode = [&] {
      if (uc_mode == "fixed") return UcMode::fixed;
      if (uc_mode == "heuristic_rounding") return UcMode::heuristic_rounding;
      if (uc_mode == "exhaustive") return UcMode::exhaustive;
      throw DataError("unknown --uc-mode '" + uc_mode + "'");
    }();
    cfg.with_static = c_static->parsed() || c_compare->parsed() || c_report->parsed();
    cfg.fd_check = c_fd->parsed();
    return run(cfg, true);
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
