#include "lme/scenario.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "lme/errors.hpp"
#include "lme/io.hpp"

namespace lme {

using nlohmann::json;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// JSON has no inf/nan literals; encode them as strings.
json num_to_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double num_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw DataError("report: bad numeric value '" + s + "'");
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num_to_json(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows ? static_cast<int>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = num_from_json(j[r][c]);
  return m;
}

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num_to_json(v[i]));
  return out;
}

Vec vec_from_json(const json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = num_from_json(j[i]);
  return v;
}

std::string uc_mode_name(UcMode m) {
  switch (m) {
    case UcMode::fixed: return "fixed";
    case UcMode::heuristic_rounding: return "heuristic_rounding";
    case UcMode::exhaustive: return "exhaustive";
  }
  return "fixed";
}

UcMode uc_mode_from(const std::string& s) {
  if (s == "fixed") return UcMode::fixed;
  if (s == "heuristic_rounding") return UcMode::heuristic_rounding;
  if (s == "exhaustive") return UcMode::exhaustive;
  throw DataError("unknown uc mode '" + s + "'");
}

}  // namespace

ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  ScenarioReport rep;
  rep.config = cfg;

  Network raw = load_network(cfg.network_file);
  if (cfg.horizon && *cfg.horizon != raw.horizon) {
    if (raw.horizon != 1)
      throw DataError("run_scenario: --horizon conflicts with the network file");
    raw.horizon = *cfg.horizon;
    // Re-broadcast scalar bounds parsed against T=1.
    for (auto& d : raw.devices)
      std::visit(
          [&](auto& dev) {
            using Ty = std::decay_t<decltype(dev)>;
            if constexpr (!std::is_same_v<Ty, Storage>) {
              if (dev.g_min.size() == 1) dev.g_min = Vec::Constant(raw.horizon, dev.g_min[0]);
              if (dev.g_max.size() == 1) dev.g_max = Vec::Constant(raw.horizon, dev.g_max[0]);
            }
          },
          d);
  }

  ValidationReport val = validate_network(raw);
  if (!val.ok())
    throw DataError("network validation failed:\n" + val.to_string());

  DemandSchedule D = load_demand_csv(cfg.demand_file, raw.n_nodes);
  if (D.periods() != raw.horizon)
    throw DataError("demand has " + std::to_string(D.periods()) +
                    " periods but the network horizon is " + std::to_string(raw.horizon));

  Network net = ensure_feasible_and_unique(raw, {cfg.voll, cfg.reg});

  SolverOptions sopts;
  sopts.tol = cfg.tol;
  sopts.reg = cfg.reg;
  sopts.voll = cfg.voll;
  sopts.uc_mode = cfg.uc_mode;

  const double t0 = now_s();
  ParametricQP pqp;
  PrimalDualSolution sol;
  if (!uncommitted_uc_devices(net).empty()) {
    if (cfg.uc_mode == UcMode::fixed)
      throw DataError("network has unresolved UC commitments; pass --uc-mode "
                      "exhaustive or heuristic_rounding");
    UcResult uc = solve_uc(net, D, sopts);
    rep.uc_commitment = uc.commitment;
    net = std::move(uc.committed_net);
    pqp = assemble(net);
    sol = std::move(uc.sol);
  } else {
    pqp = assemble(net);
    sol = solve(instantiate(pqp, D), sopts);
  }
  if (sol.status != SolveStatus::optimal)
    throw SolverError("dispatch solve failed: residual max " +
                      std::to_string(sol.residuals.max()));
  rep.solver.wall_time_s = now_s() - t0;
  rep.solver.iterations = sol.iterations;
  rep.solver.residuals = sol.residuals;

  rep.horizon = net.horizon;
  rep.n_nodes = net.n_nodes;
  rep.period_hours = net.period_hours;
  for (const auto& d : net.devices) rep.device_names.push_back(device_name(d));
  rep.dispatch = pqp.layout.gather_outputs(sol.x);

  LmeOptions lopts;
  lopts.solver = sopts;
  lopts.jitter = cfg.jitter;
  lopts.seed = cfg.seed;

  const double t1 = now_s();
  LmeResult lme = compute_lmes(pqp, D, sol, lopts);
  rep.lme_wall_time_s = now_s() - t1;
  rep.lme_dynamic = lme.lambda;
  rep.emissions_total = lme.emissions_total;
  rep.emissions_per_period = lme.emissions_per_period;
  rep.degenerate_dynamic = lme.degenerate;
  rep.condition_estimate = lme.condition_estimate;

  if (cfg.with_static) {
    StaticApproxResult st = static_approximation(net, pqp, D, sol, lopts);
    rep.lme_static = st.lmes.lambda;
    rep.degenerate_static = st.lmes.degenerate;
    try {
      const int day = cfg.day_len > 0 ? cfg.day_len : 24;
      RmsDeviation rms = rms_deviation(*rep.lme_static, rep.lme_dynamic,
                                       rep.horizon % day == 0 ? day : rep.horizon);
      rep.rms_mean_normalized = rms.mean_normalized;
      rep.rms_per_window = rms.per_window;
    } catch (const DataError& e) {
      rep.metrics_note = e.what();  // zero-median case: soft, values still reported
    }
  }

  if (cfg.fd_check) {
    Mat fd = finite_difference_lmes(net, D, cfg.fd_eps);
    rep.fd_eps = cfg.fd_eps;
    double worst = 0.0;
    for (int t = 0; t < rep.horizon; ++t)
      for (int i = 0; i < rep.n_nodes; ++i) {
        const double gap = std::abs(fd(t, i) - rep.lme_dynamic(t, i)) /
                           (1.0 + std::abs(fd(t, i)));
        worst = std::max(worst, gap);
      }
    rep.fd_max_rel_gap = worst;
  }

  if (!cfg.out_dir.empty()) write_report_files(rep);
  return rep;
}

std::string report_to_json(const ScenarioReport& rep) {
  json j;
  j["schema"] = "lme-report/v1";
  j["network_file"] = rep.config.network_file.string();
  j["demand_file"] = rep.config.demand_file.string();
  j["horizon"] = rep.horizon;
  j["n_nodes"] = rep.n_nodes;
  j["period_hours"] = num_to_json(rep.period_hours);
  j["device_names"] = rep.device_names;
  j["dispatch"] = mat_to_json(rep.dispatch);
  j["emissions"] = {{"total", num_to_json(rep.emissions_total)},
                    {"per_period", vec_to_json(rep.emissions_per_period)}};
  j["lme_dynamic"] = mat_to_json(rep.lme_dynamic);
  j["lme_static"] = rep.lme_static ? mat_to_json(*rep.lme_static) : json();
  json metrics;
  metrics["rms_mean_normalized"] =
      rep.rms_mean_normalized ? json(num_to_json(*rep.rms_mean_normalized)) : json();
  json win = json::array();
  for (double v : rep.rms_per_window) win.push_back(num_to_json(v));
  metrics["rms_per_window"] = win;
  metrics["note"] = rep.metrics_note;
  j["metrics"] = metrics;
  j["fd_check"] = rep.fd_max_rel_gap
                      ? json({{"eps", num_to_json(rep.fd_eps)},
                              {"max_rel_gap", num_to_json(*rep.fd_max_rel_gap)}})
                      : json();
  j["uc_commitment"] = rep.uc_commitment;
  j["degenerate"] = {{"dynamic", rep.degenerate_dynamic}, {"static", rep.degenerate_static}};
  j["condition_estimate"] = num_to_json(rep.condition_estimate);
  j["solver"] = {{"iterations", rep.solver.iterations},
                 {"residuals",
                  {{"stationarity", num_to_json(rep.solver.residuals.stationarity)},
                   {"primal_eq", num_to_json(rep.solver.residuals.primal_eq)},
                   {"primal_in", num_to_json(rep.solver.residuals.primal_in)},
                   {"comp_slack", num_to_json(rep.solver.residuals.comp_slack)}}},
                 {"wall_time_s", num_to_json(rep.solver.wall_time_s)},
                 {"lme_wall_time_s", num_to_json(rep.lme_wall_time_s)}};
  j["options"] = {{"tol", num_to_json(rep.config.tol)},
                  {"reg", num_to_json(rep.config.reg)},
                  {"voll", num_to_json(rep.config.voll)},
                  {"seed", rep.config.seed},
                  {"day_len", rep.config.day_len},
                  {"fd_eps", num_to_json(rep.config.fd_eps)},
                  {"jitter", num_to_json(rep.config.jitter)},
                  {"uc_mode", uc_mode_name(rep.config.uc_mode)}};
  return j.dump(2) + "\n";
}

ScenarioReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("schema", "") != "lme-report/v1")
    throw DataError("report: unknown schema");
  ScenarioReport rep;
  rep.config.network_file = j["network_file"].get<std::string>();
  rep.config.demand_file = j["demand_file"].get<std::string>();
  rep.horizon = j["horizon"].get<int>();
  rep.n_nodes = j["n_nodes"].get<int>();
  rep.period_hours = num_from_json(j["period_hours"]);
  rep.device_names = j["device_names"].get<std::vector<std::string>>();
  rep.dispatch = mat_from_json(j["dispatch"]);
  rep.emissions_total = num_from_json(j["emissions"]["total"]);
  rep.emissions_per_period = vec_from_json(j["emissions"]["per_period"]);
  rep.lme_dynamic = mat_from_json(j["lme_dynamic"]);
  if (!j["lme_static"].is_null()) rep.lme_static = mat_from_json(j["lme_static"]);
  if (!j["metrics"]["rms_mean_normalized"].is_null())
    rep.rms_mean_normalized = num_from_json(j["metrics"]["rms_mean_normalized"]);
  for (const auto& v : j["metrics"]["rms_per_window"])
    rep.rms_per_window.push_back(num_from_json(v));
  rep.metrics_note = j["metrics"].value("note", "");
  if (!j["fd_check"].is_null()) {
    rep.fd_eps = num_from_json(j["fd_check"]["eps"]);
    rep.fd_max_rel_gap = num_from_json(j["fd_check"]["max_rel_gap"]);
  }
  rep.uc_commitment = j["uc_commitment"].get<std::vector<std::vector<int>>>();
  rep.degenerate_dynamic = j["degenerate"]["dynamic"].get<bool>();
  rep.degenerate_static = j["degenerate"]["static"].get<bool>();
  rep.condition_estimate = num_from_json(j["condition_estimate"]);
  rep.solver.iterations = j["solver"]["iterations"].get<int>();
  rep.solver.residuals.stationarity = num_from_json(j["solver"]["residuals"]["stationarity"]);
  rep.solver.residuals.primal_eq = num_from_json(j["solver"]["residuals"]["primal_eq"]);
  rep.solver.residuals.primal_in = num_from_json(j["solver"]["residuals"]["primal_in"]);
  rep.solver.residuals.comp_slack = num_from_json(j["solver"]["residuals"]["comp_slack"]);
  rep.solver.wall_time_s = num_from_json(j["solver"]["wall_time_s"]);
  rep.lme_wall_time_s = num_from_json(j["solver"]["lme_wall_time_s"]);
  rep.config.tol = num_from_json(j["options"]["tol"]);
  rep.config.reg = num_from_json(j["options"]["reg"]);
  rep.config.voll = num_from_json(j["options"]["voll"]);
  rep.config.seed = j["options"]["seed"].get<unsigned>();
  rep.config.day_len = j["options"]["day_len"].get<int>();
  rep.config.fd_eps = num_from_json(j["options"]["fd_eps"]);
  rep.config.jitter = num_from_json(j["options"]["jitter"]);
  rep.config.uc_mode = uc_mode_from(j["options"]["uc_mode"].get<std::string>());
  return rep;
}

void write_report_files(const ScenarioReport& rep) {
  const auto& dir = rep.config.out_dir;
  std::filesystem::create_directories(dir);
  std::vector<std::string> node_headers;
  for (int i = 0; i < rep.n_nodes; ++i) node_headers.push_back("node_" + std::to_string(i));
  write_matrix_csv(dir / "lme.csv", rep.lme_dynamic, node_headers);
  if (rep.lme_static) write_matrix_csv(dir / "lme_static.csv", *rep.lme_static, node_headers);
  write_matrix_csv(dir / "dispatch.csv", rep.dispatch, rep.device_names);
  if (rep.config.smooth_window_fraction > 0.0) {
    Mat sm = rep.lme_dynamic;
    for (Eigen::Index c = 0; c < sm.cols(); ++c)
      sm.col(c) = rolling_mean(sm.col(c), rep.config.smooth_window_fraction);
    write_matrix_csv(dir / "lme_smoothed.csv", sm, node_headers);
  }
  std::ofstream os(dir / "report.json", std::ios::binary);
  if (!os) throw DataError("cannot write report.json under " + dir.string());
  os << report_to_json(rep);
}

}  // namespace lme
