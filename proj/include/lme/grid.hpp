// Network, device, and demand data model for dynamic DC dispatch.
#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lme {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Transmission line between two nodes. Susceptance is per-unit, rating in MW.
/// A rating of +inf means the line is never limiting (its flow rows are dropped).
struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 1.0;
  double rating = 0.0;
};

/// What the storage state of charge must satisfy at the end of the horizon.
struct TerminalSoc {
  enum class Kind { free, equal_to_initial, fixed };
  Kind kind = Kind::free;
  double value = 0.0;  // MWh, only for Kind::fixed

  static TerminalSoc free_() { return {}; }
  static TerminalSoc equal_to_initial_() { return {Kind::equal_to_initial, 0.0}; }
  static TerminalSoc fixed_(double v) { return {Kind::fixed, v}; }
};

/// Generator dispatched independently in every period. Bounds are per-period
/// vectors (length T) so time-varying renewable capacity needs no extra type.
struct StaticGenerator {
  Vec g_min;                // MW, length T
  Vec g_max;                // MW, length T (+inf allowed: no upper box row)
  double cost_quad = 0.0;   // $/MW^2 h
  double cost_lin = 0.0;    // $/MWh
  double emis_rate = 0.0;   // tCO2/MWh
  std::string name;
  bool is_slack = false;    // added by ensure_feasible_and_unique
};

/// Generator whose output can move at most `ramp` MW between periods.
struct RampGenerator {
  Vec g_min;
  Vec g_max;
  double cost_quad = 0.0;
  double cost_lin = 0.0;
  double emis_rate = 0.0;
  double ramp = 0.0;        // MW per period, > 0
  std::string name;
};

/// Energy storage. Output g_t = discharge_t - charge_t (positive when
/// injecting); soc_t = soc_{t-1} + eta*charge_t - discharge_t/eta.
struct Storage {
  double capacity = 0.0;    // C, MWh
  double power = 0.0;       // P, MW max (dis)charge
  double efficiency = 1.0;  // eta in (0, 1]
  double initial_soc = 0.0; // s0, MWh
  TerminalSoc terminal;
  std::string name;
};

/// Generator with on/off commitment. When on in period t it must produce at
/// least max(g_min_t, min_output_fraction * g_max_t); when off it is pinned
/// at zero. `commitment` (0/1 per period) may be fixed by the caller or
/// resolved by solve_uc.
struct UCGenerator {
  Vec g_min;
  Vec g_max;
  double cost_quad = 0.0;
  double cost_lin = 0.0;
  double emis_rate = 0.0;
  double min_output_fraction = 0.4;
  std::optional<std::vector<int>> commitment;
  std::string name;
};

using Device = std::variant<StaticGenerator, RampGenerator, Storage, UCGenerator>;

const std::string& device_name(const Device& d);
void set_device_name(Device& d, std::string name);
double device_emis_rate(const Device& d);
bool is_dynamic_device(const Device& d);   // Storage or RampGenerator

struct Network {
  int n_nodes = 0;
  std::vector<Line> lines;
  Mat ptdf;                      // m x n; column of the slack node is zero
  Vec line_limits;               // u_max per line, MW
  std::vector<Device> devices;
  std::vector<int> device_node;  // node index per device
  int horizon = 1;               // T
  double period_hours = 1.0;
  int slack_node = -1;           // -1: last node
  bool augmented = false;        // set by ensure_feasible_and_unique
  double aux_reg = 0.0;          // quadratic reg on storage internals, $/MW^2 h

  int n_lines() const { return static_cast<int>(line_limits.size()); }
  int n_devices() const { return static_cast<int>(devices.size()); }
  int slack() const { return slack_node >= 0 ? slack_node : n_nodes - 1; }
};

/// Demand matrix, one row per period, one column per node (MW).
struct DemandSchedule {
  Mat values;  // T x n

  int periods() const { return static_cast<int>(values.rows()); }
  int nodes() const { return static_cast<int>(values.cols()); }
  /// Stacked copy in (t, i) -> t*n + i order, matching B_D/H_D columns.
  Vec stacked() const;
};

struct Violation {
  std::string where;  // e.g. "devices[3]"
  std::string what;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

/// Checks every structural invariant of the network (dimensions, bounds,
/// device parameters, node indices). Violations are data, not exceptions.
ValidationReport validate_network(const Network& net);

/// PTDF from line susceptances: F(l, i) is the MW flow induced on line l by
/// 1 MW injected at node i and withdrawn at `slack`. Throws DataError naming
/// the isolated component if the graph is disconnected.
Mat compute_ptdf(const std::vector<Line>& lines, int n_nodes, int slack);

struct AugmentOptions {
  double voll = 10'000.0;  // $/MWh on the per-node slack generators
  double reg = 1e-6;       // quadratic floor, $/MW^2 h
};

/// Returns a copy with a high-cost slack generator at every node (feasibility)
/// and cost_quad floored at opts.reg on every device output plus storage
/// internals (uniqueness). Idempotent: an already-augmented network only gets
/// the floor re-applied.
Network ensure_feasible_and_unique(const Network& net, const AugmentOptions& opts = {});

}  // namespace lme
