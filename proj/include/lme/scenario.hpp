// End-to-end scenario pipeline: load, validate, augment, dispatch,
// differentiate, compare, report.
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "lme/analysis.hpp"
#include "lme/implicit_diff.hpp"
#include "lme/unit_commitment.hpp"

namespace lme {

struct ScenarioConfig {
  std::filesystem::path network_file;
  std::filesystem::path demand_file;
  std::filesystem::path out_dir;  // empty: no files written
  double tol = 1e-8;
  double reg = 1e-6;
  double voll = 10'000.0;
  UcMode uc_mode = UcMode::exhaustive;
  std::optional<int> horizon = {};       // override/pad check against CSV rows
  bool with_static = false;
  bool fd_check = false;
  double fd_eps = 1e-3;
  int day_len = 24;
  unsigned seed = 0;
  double jitter = 0.0;
  double smooth_window_fraction = 0.0;   // 0: no smoothing columns
};

struct SolverStats {
  int iterations = 0;
  Residuals residuals;
  double wall_time_s = 0.0;
};

struct ScenarioReport {
  int horizon = 0;
  int n_nodes = 0;
  double period_hours = 1.0;
  std::vector<std::string> device_names;       // includes slack generators
  Mat dispatch;                                // T x k
  double emissions_total = 0.0;
  Vec emissions_per_period;
  Mat lme_dynamic;                             // T x n
  std::optional<Mat> lme_static;
  std::optional<double> rms_mean_normalized;
  std::vector<double> rms_per_window;
  std::string metrics_note;                    // set when rms is unavailable
  std::optional<double> fd_max_rel_gap;
  double fd_eps = 0.0;
  std::vector<std::vector<int>> uc_commitment; // per UC device
  bool degenerate_dynamic = false;
  bool degenerate_static = false;
  double condition_estimate = 0.0;
  SolverStats solver;
  double lme_wall_time_s = 0.0;
  ScenarioConfig config;
};

/// validate -> augment -> assemble -> (solve_uc) -> solve -> compute_lmes ->
/// optional static approximation -> metrics. Deterministic for a fixed
/// config. Throws DataError (invalid inputs) or SolverError.
ScenarioReport run_scenario(const ScenarioConfig& cfg);

std::string report_to_json(const ScenarioReport& rep);
ScenarioReport report_from_json(const std::string& text);

/// Write lme.csv, dispatch.csv, report.json (and lme_static.csv when
/// present) under cfg.out_dir.
void write_report_files(const ScenarioReport& rep);

}  // namespace lme
