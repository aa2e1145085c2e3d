// Locational marginal emissions by implicit differentiation of the dispatch
// KKT system: one adjoint sparse solve against the reduced active-set
// Jacobian gives the full T x n gradient of emissions with respect to demand.
#pragma once

#include "lme/solver.hpp"

namespace lme {

/// Partition of the inequality rows at an optimum. `degenerate` rows bind
/// (slack <= tau_s) with a vanishing multiplier (lambda <= tau_lambda); the
/// emissions gradient may not exist there.
struct ActiveSet {
  std::vector<int> active;      // slack <= tau_s (includes degenerate)
  std::vector<int> inactive;
  std::vector<int> degenerate;  // subset of active
  double tau_base = 1e-6;
};

/// Default thresholds are 1e-6 * (1 + |rhs_i|) per row; pass tau >= 0 to
/// override the 1e-6 base.
ActiveSet classify_active_set(const ParametricQP& pqp, const DemandSchedule& D,
                              const PrimalDualSolution& sol, double tau_s = -1.0,
                              double tau_lambda = -1.0);

/// Reduced-form KKT Jacobians: unknowns (x, nu, lambda_active),
///   Jx = [[H, A_eq', A_act'], [A_eq, 0, 0], [A_act, 0, 0]]
///   JD = [[0], [-B_D], [-(H_D)_act]]
struct KktJacobians {
  SpMat Jx;                      // square, symmetric in reduced form
  SpMat JD;                      // (dim Jx) x (T*n)
  std::vector<int> active_rows;  // inequality rows kept, in order
};

KktJacobians build_kkt_jacobians(const ParametricQP& pqp, const DemandSchedule& D,
                                 const PrimalDualSolution& sol, const ActiveSet& aset);

/// Full complementarity form, what the implicit function theorem literally
/// differentiates: rows diag(lambda) A_in and diag(A_in x - h_in). Kept for
/// cross-validation of the reduced form; nonsymmetric.
KktJacobians build_kkt_jacobians_full(const ParametricQP& pqp, const DemandSchedule& D,
                                      const PrimalDualSolution& sol);

/// Dense solution Jacobian dx*/dD (nx rows, T*n cols) for small instances,
/// by forward solves of the given Jacobian pair. Test/diagnostic tool.
Mat solution_jacobian(const KktJacobians& jac, int nx);

struct LmeResult {
  Mat lambda;               // T x n, tCO2/MWh (period_hours = 1)
  double emissions_total = 0.0;   // tCO2
  Vec emissions_per_period;       // length T
  bool degenerate = false;
  double condition_estimate = 0.0;
  double adjoint_residual = 0.0;  // ||Jx' w - v||_inf / ||v||_inf
};

/// Emissions of a dispatch: per_period[t] = sum_j c_j G_{tj} * period_hours.
std::pair<double, Vec> emissions(const ParametricQP& pqp, const PrimalDualSolution& sol);

struct LmeOptions {
  double tau_slack = -1.0;    // -1: default scaling
  double tau_lambda = -1.0;
  bool use_full_form = false; // differentiate the complementarity form instead
  double jitter = 0.0;        // optional uniform demand jitter (MW), 0 = off
  unsigned seed = 0;          // jitter RNG seed
  SolverOptions solver;       // used by the degenerate-point re-solve
};

/// LMEs via the adjoint solve Jx' w = v, v = period_hours * emis_vec on the
/// primal block. At a singular (degenerate) point the gradient does not
/// exist; the result is then computed at the pushed demand D + eps*1 (the
/// feasible increase direction) and flagged degenerate=true, falling back to
/// a dense pseudo-solve if the pushed point is singular too.
LmeResult compute_lmes(const ParametricQP& pqp, const DemandSchedule& D,
                       const PrimalDualSolution& sol, const LmeOptions& opts = {});

/// Central-difference oracle: (E(D + eps e_ti) - E(D - eps e_ti)) / (2 eps)
/// with full re-solves at tol 1e-10. O(T*n) solves; desk scale only. Network
/// must be validated and augmented. Throws SolverError naming the
/// perturbation if any re-solve fails.
Mat finite_difference_lmes(const Network& net, const DemandSchedule& D, double eps = 1e-3);

struct StaticApproxResult {
  LmeResult lmes;
  Network net;          // the static restriction
  ParametricQP pqp;
  PrimalDualSolution sol;
};

/// LMEs of the static restriction: dynamic devices (storage, ramp-limited
/// generators) are pinned at their dynamic optimum and the now
/// period-separable problem is re-solved and differentiated. Throws
/// SolverError if the re-solve drifts from the pinned schedule.
StaticApproxResult static_approximation(const Network& net, const ParametricQP& pqp,
                                        const DemandSchedule& D,
                                        const PrimalDualSolution& sol,
                                        const LmeOptions& opts = {});

}  // namespace lme
