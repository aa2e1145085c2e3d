// Primal-dual interior-point solver for the instantiated dispatch QP.
#pragma once

#include "lme/qp.hpp"

namespace lme {

enum class SolveStatus { optimal, infeasible, numerical };

enum class UcMode { fixed, heuristic_rounding, exhaustive };

struct SolverOptions {
  double tol = 1e-8;    // absolute bound on all four KKT residuals
  int max_iter = 100;
  double reg = 1e-6;    // forwarded to ensure_feasible_and_unique by callers
  double voll = 10'000.0;
  UcMode uc_mode = UcMode::fixed;
  int verbosity = 0;    // > 0: per-iteration log to stderr
};

struct Residuals {
  double stationarity = 0.0;  // ||Hx + q + A_eq'nu + A_in'lambda||_inf
  double primal_eq = 0.0;     // ||A_eq x - b_eq||_inf
  double primal_in = 0.0;     // max(A_in x - h_in, 0)
  double comp_slack = 0.0;    // ||lambda .* (A_in x - h_in)||_inf
  double max() const;
};

struct PrimalDualSolution {
  Vec x;       // primal, MW
  Vec nu;      // equality multipliers; balance-row LMP is -nu under the
               // stationarity convention used here
  Vec lambda;  // inequality multipliers, >= -1e-9
  SolveStatus status = SolveStatus::numerical;
  Residuals residuals;
  int iterations = 0;
  double objective = 0.0;
};

/// Solve to a certified primal-dual optimum: status == optimal implies all
/// four residuals <= opts.tol. Deterministic for fixed input and options.
PrimalDualSolution solve(const QPInstance& inst, const SolverOptions& opts = {});

/// Recompute the four residual blocks from scratch, independent of the
/// solver's internal bookkeeping.
Residuals kkt_residuals(const ParametricQP& pqp, const DemandSchedule& D,
                        const PrimalDualSolution& sol);

double primal_objective(const QPInstance& inst, const Vec& x);
/// Lagrangian value at (x, nu, lambda); equals the primal objective at an
/// exact KKT point, so |primal - dual| is a computable optimality gap.
double dual_objective(const QPInstance& inst, const PrimalDualSolution& sol);

/// System marginal price for period t: the balance-row multiplier with the
/// sign flipped so prices are positive ($/MWh).
double system_price(const ParametricQP& pqp, const PrimalDualSolution& sol, int t);

}  // namespace lme
