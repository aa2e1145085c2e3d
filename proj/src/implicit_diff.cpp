// Implicit-function-theorem LMEs. The dispatch optimum solves the KKT system
// K(D, u) = 0 with unknowns u = (x, nu, lambda_active); differentiating gives
// du*/dD = -Jx^{-1} JD, and the emissions gradient follows from one adjoint
// solve Jx' w = v instead of forming the full T*n-column solution Jacobian.
#include "lme/implicit_diff.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "lme/errors.hpp"
#include "kkt_structure.hpp"

namespace lme {

namespace {

double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double matrix_inf_norm(const SpMat& M) {
  Vec row_sums = Vec::Zero(M.rows());
  for (int c = 0; c < M.outerSize(); ++c)
    for (SpMat::InnerIterator it(M, c); it; ++it) row_sums[it.row()] += std::abs(it.value());
  return row_sums.size() ? row_sums.maxCoeff() : 0.0;
}

}  // namespace

std::pair<double, Vec> emissions(const ParametricQP& pqp, const PrimalDualSolution& sol) {
  const int T = pqp.horizon;
  const int k = static_cast<int>(pqp.layout.device.size());
  Vec per_period = Vec::Zero(T);
  for (int j = 0; j < k; ++j)
    for (int t = 0; t < T; ++t) {
      const int ix = pqp.layout.output_index(j, t);
      per_period[t] += pqp.emis_vec[ix] * sol.x[ix] * pqp.period_hours;
    }
  return {per_period.sum(), per_period};
}

ActiveSet classify_active_set(const ParametricQP& pqp, const DemandSchedule& D,
                              const PrimalDualSolution& sol, double tau_s,
                              double tau_lambda) {
  const double base_s = tau_s >= 0 ? tau_s : 1e-6;
  const double base_l = tau_lambda >= 0 ? tau_lambda : 1e-6;
  QPInstance inst = instantiate(pqp, D);
  Vec slack = inst.h_in - pqp.A_in * sol.x;
  ActiveSet aset;
  aset.tau_base = base_s;
  for (int i = 0; i < pqp.n_in(); ++i) {
    const double scale = 1.0 + std::abs(inst.h_in[i]);
    if (slack[i] <= base_s * scale) {
      aset.active.push_back(i);
      if (sol.lambda[i] <= base_l * scale) aset.degenerate.push_back(i);
    } else {
      aset.inactive.push_back(i);
    }
  }
  return aset;
}

KktJacobians build_kkt_jacobians(const ParametricQP& pqp, const DemandSchedule& D,
                                 const PrimalDualSolution& sol, const ActiveSet& aset) {
  (void)D;
  (void)sol;
  const int nx = pqp.nx(), ne = pqp.n_eq();
  const int na = static_cast<int>(aset.active.size());
  const int dim = nx + ne + na;
  if (ne + na > nx) {
    // More equality + active rows than primal variables: necessarily
    // dependent. Report the active rows as the candidate set.
    std::ostringstream os;
    os << "reduced KKT Jacobian is structurally singular: " << ne + na
       << " active/equality rows exceed " << nx << " primal variables";
    throw SingularJacobian(os.str(), aset.active);
  }

  std::vector<Eigen::Triplet<double>> Jt, JDt;
  for (int c = 0; c < pqp.H.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.H, c); it; ++it)
      Jt.emplace_back(it.row(), it.col(), it.value());
  for (int c = 0; c < pqp.A_eq.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.A_eq, c); it; ++it) {
      Jt.emplace_back(nx + it.row(), it.col(), it.value());
      Jt.emplace_back(it.col(), nx + it.row(), it.value());
    }
  {
    Eigen::SparseMatrix<double, Eigen::RowMajor> Ain_r(pqp.A_in);
    for (int a = 0; a < na; ++a) {
      const int r = aset.active[a];
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ain_r, r); it;
           ++it) {
        Jt.emplace_back(nx + ne + a, it.col(), it.value());
        Jt.emplace_back(it.col(), nx + ne + a, it.value());
      }
    }
  }
  for (int c = 0; c < pqp.B_D.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.B_D, c); it; ++it)
      JDt.emplace_back(nx + it.row(), it.col(), -it.value());
  {
    Eigen::SparseMatrix<double, Eigen::RowMajor> HD_r(pqp.H_D);
    for (int a = 0; a < na; ++a) {
      const int r = aset.active[a];
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(HD_r, r); it;
           ++it)
        JDt.emplace_back(nx + ne + a, it.col(), -it.value());
    }
  }

  KktJacobians jac;
  jac.active_rows = aset.active;
  jac.Jx.resize(dim, dim);
  jac.Jx.setFromTriplets(Jt.begin(), Jt.end());
  jac.JD.resize(dim, pqp.horizon * pqp.n_nodes);
  jac.JD.setFromTriplets(JDt.begin(), JDt.end());
  return jac;
}

KktJacobians build_kkt_jacobians_full(const ParametricQP& pqp, const DemandSchedule& D,
                                      const PrimalDualSolution& sol) {
  const int nx = pqp.nx(), ne = pqp.n_eq(), ni = pqp.n_in();
  const int dim = nx + ne + ni;
  QPInstance inst = instantiate(pqp, D);
  Vec viol = pqp.A_in * sol.x - inst.h_in;  // A_in x - h (= -slack)

  std::vector<Eigen::Triplet<double>> Jt, JDt;
  for (int c = 0; c < pqp.H.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.H, c); it; ++it)
      Jt.emplace_back(it.row(), it.col(), it.value());
  for (int c = 0; c < pqp.A_eq.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.A_eq, c); it; ++it) {
      Jt.emplace_back(nx + it.row(), it.col(), it.value());
      Jt.emplace_back(it.col(), nx + it.row(), it.value());
    }
  for (int c = 0; c < pqp.A_in.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.A_in, c); it; ++it) {
      Jt.emplace_back(it.col(), nx + ne + it.row(), it.value());  // G' in stationarity
      const double lv = sol.lambda[it.row()] * it.value();        // diag(lambda) G
      if (lv != 0.0) Jt.emplace_back(nx + ne + it.row(), it.col(), lv);
    }
  for (int i = 0; i < ni; ++i)
    Jt.emplace_back(nx + ne + i, nx + ne + i, viol[i]);  // diag(A_in x - h)

  for (int c = 0; c < pqp.B_D.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.B_D, c); it; ++it)
      JDt.emplace_back(nx + it.row(), it.col(), -it.value());
  for (int c = 0; c < pqp.H_D.outerSize(); ++c)
    for (SpMat::InnerIterator it(pqp.H_D, c); it; ++it) {
      const double lv = sol.lambda[it.row()] * it.value();
      if (lv != 0.0) JDt.emplace_back(nx + ne + it.row(), it.col(), -lv);
    }

  KktJacobians jac;
  jac.active_rows.resize(ni);
  for (int i = 0; i < ni; ++i) jac.active_rows[i] = i;
  jac.Jx.resize(dim, dim);
  jac.Jx.setFromTriplets(Jt.begin(), Jt.end());
  jac.JD.resize(dim, pqp.horizon * pqp.n_nodes);
  jac.JD.setFromTriplets(JDt.begin(), JDt.end());
  return jac;
}

Mat solution_jacobian(const KktJacobians& jac, int nx) {
  Eigen::SparseLU<SpMat> lu;
  lu.compute(jac.Jx);
  if (lu.info() != Eigen::Success)
    throw SingularJacobian("solution_jacobian: Jx is singular", jac.active_rows);
  Mat rhs = -Mat(jac.JD);
  Mat X = lu.solve(rhs);
  return X.topRows(nx);
}

namespace {

// Dropping a redundant SoC bound row keeps the active-constraint span (the
// dynamics row then carries the SoC pin) and restores full rank; none of the
// involved rows depend on demand, so the sensitivities are unchanged.
ActiveSet prune_storage_redundancy(const ParametricQP& pqp, const ActiveSet& aset) {
  std::vector<char> is_active(pqp.n_in(), 0);
  for (int r : aset.active) is_active[r] = 1;
  const std::vector<char> drop = detail::storage_redundant_rows(pqp, is_active);
  ActiveSet out = aset;
  out.active.clear();
  for (int r : aset.active)
    if (!drop[r]) out.active.push_back(r);
  return out;
}

struct AdjointOutcome {
  Mat lambda;
  double condition = 0.0;
  double adjoint_residual = 0.0;
};

// One adjoint solve against the chosen Jacobian form. nullopt == singular.
std::optional<AdjointOutcome> adjoint_lmes(const ParametricQP& pqp,
                                           const DemandSchedule& D,
                                           const PrimalDualSolution& sol,
                                           const ActiveSet& aset_in, bool full_form) {
  const ActiveSet aset = prune_storage_redundancy(pqp, aset_in);
  KktJacobians jac;
  try {
    jac = full_form ? build_kkt_jacobians_full(pqp, D, sol)
                    : build_kkt_jacobians(pqp, D, sol, aset);
  } catch (const SingularJacobian&) {
    return std::nullopt;
  }
  const int dim = static_cast<int>(jac.Jx.rows());
  const int nx = pqp.nx();

  // The reduced form is symmetric; the full form is not, so factor J' there.
  SpMat Jt = full_form ? SpMat(jac.Jx.transpose()) : jac.Jx;
  Eigen::SparseLU<SpMat> lu;
  lu.compute(Jt);
  if (lu.info() != Eigen::Success) return std::nullopt;

  Vec v = Vec::Zero(dim);
  v.head(nx) = pqp.emis_vec * pqp.period_hours;
  Vec w = lu.solve(v);
  if (!w.allFinite()) return std::nullopt;
  const double vn = std::max(inf_norm(v), 1e-300);
  double rel = inf_norm(Vec(v - Jt * w)) / vn;
  for (int pass = 0; pass < 3 && rel > 1e-10; ++pass) {
    w += lu.solve(Vec(v - Jt * w));
    rel = inf_norm(Vec(v - Jt * w)) / vn;
  }
  if (!w.allFinite() || rel > 1e-6) return std::nullopt;  // numerically singular

  AdjointOutcome out;
  out.adjoint_residual = rel;
  Vec lam_vec = -(jac.JD.transpose() * w);
  out.lambda = Mat(pqp.horizon, pqp.n_nodes);
  for (int t = 0; t < pqp.horizon; ++t)
    for (int i = 0; i < pqp.n_nodes; ++i)
      out.lambda(t, i) = lam_vec[t * pqp.n_nodes + i];

  // Cheap lower-bound condition estimate from two deterministic probes.
  const double norm_J = matrix_inf_norm(Jt);
  double inv_est = 0.0;
  for (int probe = 0; probe < 2; ++probe) {
    Vec r(dim);
    for (int i = 0; i < dim; ++i) r[i] = probe == 0 ? 1.0 : (i % 2 ? -1.0 : 1.0);
    Vec y = lu.solve(r);
    if (y.allFinite()) inv_est = std::max(inv_est, inf_norm(y) / inf_norm(r));
  }
  out.condition = norm_J * inv_est;
  return out;
}

// Minimum-norm least-squares fallback for singular points; desk scale only.
std::optional<AdjointOutcome> pseudo_solve_lmes(const ParametricQP& pqp,
                                                const DemandSchedule& D,
                                                const PrimalDualSolution& sol,
                                                const ActiveSet& aset) {
  KktJacobians jac;
  try {
    jac = build_kkt_jacobians(pqp, D, sol, aset);
  } catch (const SingularJacobian&) {
    // Rebuild without the structural-count guard by padding: fall back to the
    // full complementarity form, which always has square dimensions.
    jac = build_kkt_jacobians_full(pqp, D, sol);
  }
  const int dim = static_cast<int>(jac.Jx.rows());
  if (dim > 4000) return std::nullopt;
  const int nx = pqp.nx();
  Mat Jt = Mat(jac.Jx).transpose();
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(Jt);
  Vec v = Vec::Zero(dim);
  v.head(nx) = pqp.emis_vec * pqp.period_hours;
  Vec w = cod.solve(v);
  AdjointOutcome out;
  out.condition = std::numeric_limits<double>::infinity();
  out.adjoint_residual = inf_norm(Vec(v - Jt * w)) / std::max(inf_norm(v), 1e-300);
  Vec lam_vec = -(jac.JD.transpose() * w);
  out.lambda = Mat(pqp.horizon, pqp.n_nodes);
  for (int t = 0; t < pqp.horizon; ++t)
    for (int i = 0; i < pqp.n_nodes; ++i)
      out.lambda(t, i) = lam_vec[t * pqp.n_nodes + i];
  return out;
}

}  // namespace

LmeResult compute_lmes(const ParametricQP& pqp, const DemandSchedule& D,
                       const PrimalDualSolution& sol, const LmeOptions& opts) {
  if (sol.status != SolveStatus::optimal)
    throw SolverError("compute_lmes: dispatch solution is not optimal");

  LmeResult result;
  auto [total, per_period] = emissions(pqp, sol);
  result.emissions_total = total;
  result.emissions_per_period = per_period;

  // Optional caller-enabled demand jitter to escape razor-edge ties.
  DemandSchedule Dw = D;
  PrimalDualSolution solw = sol;
  if (opts.jitter > 0.0) {
    std::mt19937 rng(opts.seed);
    std::uniform_real_distribution<double> u(-opts.jitter, opts.jitter);
    for (int t = 0; t < Dw.periods(); ++t)
      for (int i = 0; i < Dw.nodes(); ++i) Dw.values(t, i) += u(rng);
    solw = solve(instantiate(pqp, Dw), opts.solver);
    if (solw.status != SolveStatus::optimal)
      throw SolverError("compute_lmes: jittered re-solve failed");
  }

  ActiveSet aset = classify_active_set(pqp, Dw, solw, opts.tau_slack, opts.tau_lambda);
  // Zero multipliers forced by the idle-storage row redundancy are dual
  // nullspace artifacts, not kinks; only unexcused degenerate rows flag.
  {
    std::vector<char> is_active(pqp.n_in(), 0);
    for (int r : aset.active) is_active[r] = 1;
    const std::vector<char> dropped = detail::storage_redundant_rows(pqp, is_active);
    std::vector<std::pair<int, int>> excused;
    for (int r = 0; r < pqp.n_in(); ++r)
      if (dropped[r]) excused.emplace_back(pqp.in_tags[r].device, pqp.in_tags[r].period);
    bool real_kink = false;
    for (int r : aset.degenerate) {
      const auto& tag = pqp.in_tags[r];
      const bool storage_bound = tag.kind == RowTag::Kind::charge_lo ||
                                 tag.kind == RowTag::Kind::charge_hi ||
                                 tag.kind == RowTag::Kind::discharge_lo ||
                                 tag.kind == RowTag::Kind::discharge_hi ||
                                 tag.kind == RowTag::Kind::soc_lo ||
                                 tag.kind == RowTag::Kind::soc_hi;
      const bool is_excused =
          storage_bound &&
          std::find(excused.begin(), excused.end(),
                    std::make_pair(tag.device, tag.period)) != excused.end();
      real_kink |= !is_excused;
    }
    result.degenerate = real_kink;
  }

  auto outcome = adjoint_lmes(pqp, Dw, solw, aset, opts.use_full_form);
  if (!outcome) {
    // Singular Jacobian: the gradient does not exist at D. Differentiate at
    // the pushed demand D + eps*1 (the feasible increase direction, matching
    // the economic reading of a marginal consumer) and flag the result.
    result.degenerate = true;
    const double eps = 1e-3 * (1.0 + Dw.values.cwiseAbs().maxCoeff());
    DemandSchedule Dp = Dw;
    Dp.values.array() += eps;
    PrimalDualSolution solp = solve(instantiate(pqp, Dp), opts.solver);
    if (solp.status == SolveStatus::optimal) {
      ActiveSet ap = classify_active_set(pqp, Dp, solp, opts.tau_slack, opts.tau_lambda);
      outcome = adjoint_lmes(pqp, Dp, solp, ap, opts.use_full_form);
    }
    if (!outcome) outcome = pseudo_solve_lmes(pqp, Dw, solw, aset);
    if (!outcome)
      throw SingularJacobian(
          "compute_lmes: KKT Jacobian singular and the pushed/pseudo fallbacks "
          "failed (problem too large for a dense pseudo-solve?)");
  }
  result.lambda = outcome->lambda;
  result.condition_estimate = outcome->condition;
  result.adjoint_residual = outcome->adjoint_residual;
  return result;
}

Mat finite_difference_lmes(const Network& net, const DemandSchedule& D, double eps) {
  if (!(eps > 0)) throw DataError("finite_difference_lmes: eps must be > 0");
  const ParametricQP pqp = assemble(net);
  const int T = D.periods(), n = D.nodes();

  SolverOptions fd_opts;
  fd_opts.tol = 1e-10;
  fd_opts.max_iter = 200;

  auto emissions_at = [&](int t, int i, double shift) {
    DemandSchedule Dp = D;
    Dp.values(t, i) += shift;
    PrimalDualSolution s = solve(instantiate(pqp, Dp), fd_opts);
    if (s.status != SolveStatus::optimal) {
      std::ostringstream os;
      os << "finite_difference_lmes: re-solve at (t=" << t << ", node=" << i
         << ", shift=" << shift << ") did not reach optimality";
      throw SolverError(os.str());
    }
    return emissions(pqp, s).first;
  };

  Mat fd(T, n);
  std::exception_ptr error;
  std::mutex error_mutex;
  const int total = T * n;
  const unsigned workers =
      std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                         total >= 8 ? 8u : 1u);
  std::atomic<int> next{0};
  auto work = [&]() {
    for (int idx = next.fetch_add(1); idx < total; idx = next.fetch_add(1)) {
      const int t = idx / n, i = idx % n;
      try {
        const double ep = emissions_at(t, i, eps);
        const double em = emissions_at(t, i, -eps);
        fd(t, i) = (ep - em) / (2.0 * eps);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return fd;
}

StaticApproxResult static_approximation(const Network& net, const ParametricQP& pqp,
                                        const DemandSchedule& D,
                                        const PrimalDualSolution& sol,
                                        const LmeOptions& opts) {
  if (sol.status != SolveStatus::optimal)
    throw SolverError("static_approximation: dynamic solution is not optimal");
  const Mat G = pqp.layout.gather_outputs(sol.x);

  // Pin every dynamic device at its dynamic optimum. The pinned schedule is a
  // per-period equality, so the restriction decomposes across periods.
  Network net_s = net;
  for (int j = 0; j < net.n_devices(); ++j) {
    if (!is_dynamic_device(net.devices[j])) continue;
    StaticGenerator pinned;
    pinned.g_min = G.col(j);
    pinned.g_max = G.col(j);
    pinned.cost_quad = net.aux_reg;
    pinned.cost_lin = 0.0;
    pinned.emis_rate = device_emis_rate(net.devices[j]);
    pinned.name = device_name(net.devices[j]) + "_pinned";
    net_s.devices[j] = pinned;
  }

  StaticApproxResult out;
  out.net = std::move(net_s);
  out.pqp = assemble(out.net);
  out.sol = solve(instantiate(out.pqp, D), opts.solver);
  if (out.sol.status != SolveStatus::optimal)
    throw SolverError("static_approximation: pinned re-solve failed (solver drift?)");
  const Mat Gs = out.pqp.layout.gather_outputs(out.sol.x);
  const double drift = (Gs - G).cwiseAbs().maxCoeff();
  if (drift > 1e-4 * (1.0 + G.cwiseAbs().maxCoeff())) {
    std::ostringstream os;
    os << "static_approximation: re-solved dispatch drifts " << drift
       << " MW from the dynamic optimum";
    throw SolverError(os.str());
  }
  out.lmes = compute_lmes(out.pqp, D, out.sol, opts);
  return out;
}

}  // namespace lme
