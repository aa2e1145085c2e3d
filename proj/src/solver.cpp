// Mehrotra predictor-corrector interior-point method on the symmetric
// quasi-definite augmented system
//
//   [ H + dI   A_eq'       A_in'      ] [dx ]   [ r1 ]
//   [ A_eq     -dI         0          ] [dnu] = [ r2 ]
//   [ A_in     0           -S/L - dI  ] [dl ]   [ r3 ]
//
// factored with SimplicialLDLT (no pivoting needed for quasi-definite
// matrices) plus iterative refinement against the unregularized operator.
// A final active-set polish solve drives the residuals to the 1e-8 contract
// and produces exact zeros in the multiplier/slack pairs, which downstream
// active-set classification relies on.
#include "lme/solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "lme/errors.hpp"
#include "kkt_structure.hpp"

namespace lme {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Largest alpha in (0, 1] with v + alpha*dv >= 0.
double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

Residuals contract_residuals(const ParametricQP& qp, const Vec& b_eq, const Vec& h_in,
                             const Vec& x, const Vec& nu, const Vec& lambda) {
  Residuals r;
  Vec stat = qp.H * x + qp.q;
  if (qp.n_eq()) stat += qp.A_eq.transpose() * nu;
  if (qp.n_in()) stat += qp.A_in.transpose() * lambda;
  r.stationarity = inf_norm(stat);
  if (qp.n_eq()) r.primal_eq = inf_norm(Vec(qp.A_eq * x - b_eq));
  if (qp.n_in()) {
    Vec viol = qp.A_in * x - h_in;
    r.primal_in = std::max(0.0, viol.maxCoeff());
    r.comp_slack = inf_norm(Vec(lambda.cwiseProduct(viol)));
  }
  return r;
}

struct IpmWorkspace {
  const ParametricQP& qp;
  const Vec& b;  // b_eq
  const Vec& h;  // h_in
  int nx, ne, ni, dim;
  SpMat A_all;          // the constant off-diagonal structure (lower triangle)
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
  bool analyzed = false;

  IpmWorkspace(const QPInstance& inst)
      : qp(*inst.qp), b(inst.b_eq), h(inst.h_in), nx(qp.nx()), ne(qp.n_eq()),
        ni(qp.n_in()), dim(nx + ne + ni) {}

  // Assemble the lower triangle of the augmented matrix for given barrier
  // diagonal d_in = s ./ lambda and static regularization delta.
  SpMat augmented(const Vec& d_in, double delta) const {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(qp.H.nonZeros() + qp.A_eq.nonZeros() + qp.A_in.nonZeros() + dim);
    for (int c = 0; c < qp.H.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.H, c); it; ++it)
        if (it.row() >= it.col()) trips.emplace_back(it.row(), it.col(), it.value());
    for (int c = 0; c < qp.A_eq.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.A_eq, c); it; ++it)
        trips.emplace_back(nx + it.row(), it.col(), it.value());
    for (int c = 0; c < qp.A_in.outerSize(); ++c)
      for (SpMat::InnerIterator it(qp.A_in, c); it; ++it)
        trips.emplace_back(nx + ne + it.row(), it.col(), it.value());
    for (int i = 0; i < nx; ++i) trips.emplace_back(i, i, delta);
    for (int i = 0; i < ne; ++i) trips.emplace_back(nx + i, nx + i, -delta);
    for (int i = 0; i < ni; ++i)
      trips.emplace_back(nx + ne + i, nx + ne + i, -d_in[i] - delta);
    SpMat M(dim, dim);
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
  }

  bool factorize(const Vec& d_in, double delta) {
    SpMat M = augmented(d_in, delta);
    if (!analyzed) {
      ldlt.analyzePattern(M);
      analyzed = true;
    }
    ldlt.factorize(M);
    return ldlt.info() == Eigen::Success;
  }

  // Apply the *unregularized* operator for iterative refinement.
  Vec apply(const Vec& d_in, const Vec& y) const {
    Vec out(dim);
    const auto yx = y.head(nx);
    const auto yn = y.segment(nx, ne);
    const auto yl = y.tail(ni);
    Vec ox = qp.H * yx;
    if (ne) ox += qp.A_eq.transpose() * yn;
    if (ni) ox += qp.A_in.transpose() * yl;
    out.head(nx) = ox;
    if (ne) out.segment(nx, ne) = qp.A_eq * yx;
    if (ni) out.tail(ni) = qp.A_in * yx - d_in.cwiseProduct(yl);
    return out;
  }

  Vec solve_refined(const Vec& d_in, const Vec& rhs) {
    Vec y = ldlt.solve(rhs);
    const double scale = 1.0 + inf_norm(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      Vec res = rhs - apply(d_in, y);
      if (inf_norm(res) <= 1e-14 * scale) break;
      y += ldlt.solve(res);
    }
    return y;
  }
};

// Reduced equality-KKT solve on a fixed active set; returns false when the
// system is singular. Used both for polishing and for equality-only QPs.
bool reduced_solve(const ParametricQP& qp, const Vec& b_eq, const Vec& h_in,
                   const std::vector<int>& active, Vec& x, Vec& nu, Vec& lam_active) {
  const int nx = qp.nx(), ne = qp.n_eq();
  const int na = static_cast<int>(active.size());
  const int dim = nx + ne + na;
  std::vector<Eigen::Triplet<double>> trips;
  for (int c = 0; c < qp.H.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.H, c); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  for (int c = 0; c < qp.A_eq.outerSize(); ++c)
    for (SpMat::InnerIterator it(qp.A_eq, c); it; ++it) {
      trips.emplace_back(nx + it.row(), it.col(), it.value());
      trips.emplace_back(it.col(), nx + it.row(), it.value());
    }
  // Row-major gather of the active inequality rows.
  {
    Eigen::SparseMatrix<double, Eigen::RowMajor> Ain_r(qp.A_in);
    for (int a = 0; a < na; ++a) {
      const int r = active[a];
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ain_r, r); it;
           ++it) {
        trips.emplace_back(nx + ne + a, it.col(), it.value());
        trips.emplace_back(it.col(), nx + ne + a, it.value());
      }
    }
  }
  SpMat K(dim, dim);
  K.setFromTriplets(trips.begin(), trips.end());
  Eigen::SparseLU<SpMat> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success) return false;
  Vec rhs(dim);
  rhs.head(nx) = -qp.q;
  rhs.segment(nx, ne) = b_eq;
  for (int a = 0; a < na; ++a) rhs[nx + ne + a] = h_in[active[a]];
  Vec y = lu.solve(rhs);
  // One refinement pass; the saddle system can be ill-conditioned.
  {
    Vec res = rhs - K * y;
    if (inf_norm(res) > 1e-14 * (1.0 + inf_norm(rhs))) y += lu.solve(res);
  }
  if (!y.allFinite()) return false;
  x = y.head(nx);
  nu = y.segment(nx, ne);
  lam_active = y.tail(na);
  return true;
}

// Active-set polish: solve the equality-reduced system on a guessed active
// set, then add violated rows / drop negative multipliers for a few rounds.
bool polish(const ParametricQP& qp, const Vec& b_eq, const Vec& h_in, const Vec& s,
            const Vec& x_ipm, const Vec& lam_ipm, double tol, Vec& x, Vec& nu,
            Vec& lambda, Residuals& out_res) {
  const int ni = qp.n_in();
  std::vector<char> in_set(ni, 0);
  for (int i = 0; i < ni; ++i) in_set[i] = lam_ipm[i] > s[i] ? 1 : 0;
  const double x_scale = 1.0 + inf_norm(x_ipm);
  const double lam_scale = 1.0 + inf_norm(lam_ipm);

  for (int round = 0; round < 5; ++round) {
    // Idle-storage periods make some bound rows linearly dependent on the
    // SoC dynamics; keep those out so the reduced solve stays full rank.
    const std::vector<char> drop = detail::storage_redundant_rows(qp, in_set);
    std::vector<int> active;
    for (int i = 0; i < ni; ++i)
      if (in_set[i] && !drop[i]) active.push_back(i);
    Vec px, pnu, plam;
    if (!reduced_solve(qp, b_eq, h_in, active, px, pnu, plam)) return false;
    // A polish far from the interior-point iterate means the active-set
    // guess was wrong; iterating on it tends to cascade, so give up.
    if (inf_norm(Vec(px - x_ipm)) > 1e3 * x_scale ||
        (plam.size() && inf_norm(plam) > 1e3 * lam_scale))
      return false;

    bool changed = false;
    // Release the most negative multiplier, one row per round.
    int worst_row = -1;
    double worst_val = -1e-9;
    for (size_t a = 0; a < active.size(); ++a) {
      const double scaled = plam[a] / (1.0 + std::abs(h_in[active[a]]));
      if (scaled < worst_val) {
        worst_val = scaled;
        worst_row = active[a];
      }
    }
    if (worst_row >= 0) {
      in_set[worst_row] = 0;
      changed = true;
    }
    // Re-impose rows the polished point violates.
    Vec viol = qp.A_in * px - h_in;
    for (int i = 0; i < ni; ++i) {
      if (!in_set[i] && viol[i] > 1e-9 * (1.0 + std::abs(h_in[i]))) {
        in_set[i] = 1;
        changed = true;
      }
    }
    if (!changed) {
      Vec full_lam = Vec::Zero(ni);
      for (size_t a = 0; a < active.size(); ++a) full_lam[active[a]] = plam[a];
      // Tolerate polish round-off at the -1e-9 dual feasibility boundary.
      for (int i = 0; i < ni; ++i)
        if (full_lam[i] < 0.0 && full_lam[i] > -1e-9) full_lam[i] = 0.0;
      Residuals res = contract_residuals(qp, b_eq, h_in, px, pnu, full_lam);
      if (res.max() <= tol && full_lam.minCoeff() >= -1e-9) {
        x = px;
        nu = pnu;
        lambda = full_lam;
        out_res = res;
        return true;
      }
      return false;
    }
  }
  return false;
}

}  // namespace

double Residuals::max() const {
  return std::max({stationarity, primal_eq, primal_in, comp_slack});
}

double primal_objective(const QPInstance& inst, const Vec& x) {
  const ParametricQP& qp = *inst.qp;
  return 0.5 * x.dot(qp.H * x) + qp.q.dot(x);
}

double dual_objective(const QPInstance& inst, const PrimalDualSolution& sol) {
  const ParametricQP& qp = *inst.qp;
  double val = primal_objective(inst, sol.x);
  if (qp.n_eq()) val += sol.nu.dot(qp.A_eq * sol.x - inst.b_eq);
  if (qp.n_in()) val += sol.lambda.dot(qp.A_in * sol.x - inst.h_in);
  return val;
}

Residuals kkt_residuals(const ParametricQP& pqp, const DemandSchedule& D,
                        const PrimalDualSolution& sol) {
  QPInstance inst = instantiate(pqp, D);
  return contract_residuals(pqp, inst.b_eq, inst.h_in, sol.x, sol.nu, sol.lambda);
}

double system_price(const ParametricQP& pqp, const PrimalDualSolution& sol, int t) {
  for (int r = 0; r < pqp.n_eq(); ++r)
    if (pqp.eq_tags[r].kind == RowTag::Kind::balance && pqp.eq_tags[r].period == t)
      return -sol.nu[r];
  throw DataError("system_price: no balance row for period " + std::to_string(t));
}

PrimalDualSolution solve(const QPInstance& inst, const SolverOptions& opts) {
  const ParametricQP& qp = *inst.qp;
  const int nx = qp.nx(), ne = qp.n_eq(), ni = qp.n_in();
  if (!(opts.tol > 0)) throw DataError("SolverOptions.tol must be > 0");

  PrimalDualSolution sol;
  sol.x = Vec::Zero(nx);
  sol.nu = Vec::Zero(ne);
  sol.lambda = Vec::Zero(ni);

  if (ni == 0) {
    // Pure equality QP: one reduced solve is exact.
    Vec x, nu, lam;
    if (reduced_solve(qp, inst.b_eq, inst.h_in, {}, x, nu, lam)) {
      sol.x = x;
      sol.nu = nu;
      sol.residuals = contract_residuals(qp, inst.b_eq, inst.h_in, x, nu, sol.lambda);
      sol.status = sol.residuals.max() <= opts.tol ? SolveStatus::optimal
                                                   : SolveStatus::numerical;
    } else {
      sol.status = SolveStatus::numerical;
    }
    sol.objective = primal_objective(inst, sol.x);
    return sol;
  }

  IpmWorkspace ws(inst);
  double delta = 1e-9;

  // Mehrotra-style starting point: a single least-squares-flavored solve with
  // unit barrier diagonal, then shift the slack/multiplier pair positive.
  Vec x = Vec::Zero(nx), nu = Vec::Zero(ne);
  Vec s = Vec::Ones(ni), lam = Vec::Ones(ni);
  {
    if (ws.factorize(Vec::Ones(ni), 1e-8)) {
      Vec rhs(ws.dim);
      rhs.head(nx) = -qp.q;
      rhs.segment(nx, ne) = inst.b_eq;
      rhs.tail(ni) = inst.h_in;
      Vec y = ws.ldlt.solve(rhs);
      if (y.allFinite()) {
        x = y.head(nx);
        nu = y.segment(nx, ne);
        Vec lam_g = y.tail(ni);
        Vec s_g = inst.h_in - qp.A_in * x;
        const double ds = std::max(0.0, -1.5 * s_g.minCoeff());
        const double dl = std::max(0.0, -1.5 * lam_g.minCoeff());
        Vec s1 = s_g.array() + ds;
        Vec l1 = lam_g.array() + dl;
        const double dot = s1.dot(l1);
        const double sum_s = s1.sum(), sum_l = l1.sum();
        if (dot > 0 && sum_s > 0 && sum_l > 0) {
          s = s1.array() + 0.5 * dot / sum_l;
          lam = l1.array() + 0.5 * dot / sum_s;
        }
        s = s.cwiseMax(1e-8);
        lam = lam.cwiseMax(1e-8);
      }
    }
  }

  Residuals best_res;
  best_res.stationarity = kInf;
  Vec best_x = x, best_nu = nu, best_lam = lam, best_s = s;
  bool converged = false;
  int it = 0;
  int stagnant = 0;

  for (; it < opts.max_iter; ++it) {
    Vec r_stat = qp.H * x + qp.q +
                 qp.A_eq.transpose() * nu + qp.A_in.transpose() * lam;
    Vec r_eq = qp.A_eq * x - inst.b_eq;
    Vec r_in = qp.A_in * x + s - inst.h_in;

    Residuals res = contract_residuals(qp, inst.b_eq, inst.h_in, x, nu, lam);
    if (it == 0 || res.max() < 0.99 * best_res.max()) {
      stagnant = 0;
    } else {
      ++stagnant;
    }
    if (res.max() < best_res.max() || it == 0) {
      best_res = res;
      best_x = x;
      best_nu = nu;
      best_lam = lam;
      best_s = s;
    }
    const double mu = s.dot(lam) / ni;
    if (opts.verbosity > 0)
      std::cerr << "ipm it=" << it << " mu=" << mu << " stat=" << res.stationarity
                << " peq=" << res.primal_eq << " pin=" << res.primal_in
                << " comp=" << res.comp_slack << "\n";
    if (res.max() <= opts.tol) {
      converged = true;
      break;
    }
    if (!std::isfinite(mu) || inf_norm(lam) > 1e14 || inf_norm(x) > 1e14) break;
    // No measurable progress for a while: hand over to the polish step.
    if (stagnant >= 10) break;

    Vec d_in = s.cwiseQuotient(lam);
    bool ok = false;
    for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
      ok = ws.factorize(d_in, delta);
      if (!ok) delta *= 100.0;
    }
    if (!ok) break;

    // Predictor (affine scaling direction).
    Vec rhs(ws.dim);
    rhs.head(nx) = -r_stat;
    rhs.segment(nx, ne) = -r_eq;
    Vec r_comp = s.cwiseProduct(lam);
    rhs.tail(ni) = -r_in + r_comp.cwiseQuotient(lam);
    Vec d_aff = ws.solve_refined(d_in, rhs);
    Vec dlam_aff = d_aff.tail(ni);
    Vec ds_aff = -(r_comp + s.cwiseProduct(dlam_aff)).cwiseQuotient(lam);

    const double a_p_aff = max_step(s, ds_aff);
    const double a_d_aff = max_step(lam, dlam_aff);
    const double mu_aff =
        (s + a_p_aff * ds_aff).dot(lam + a_d_aff * dlam_aff) / ni;
    double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
    sigma = std::clamp(sigma, 1e-8, 1.0 - 1e-8);

    // Corrector with Mehrotra's second-order term.
    r_comp = s.cwiseProduct(lam) + ds_aff.cwiseProduct(dlam_aff) -
             Vec::Constant(ni, sigma * mu);
    rhs.tail(ni) = -r_in + r_comp.cwiseQuotient(lam);
    Vec d = ws.solve_refined(d_in, rhs);
    Vec dx = d.head(nx);
    Vec dnu = d.segment(nx, ne);
    Vec dlam = d.tail(ni);
    Vec ds = -(r_comp + s.cwiseProduct(dlam)).cwiseQuotient(lam);

    const double eta = std::max(0.995, 1.0 - 10.0 * mu);
    const double a_p = std::min(1.0, eta * max_step(s, ds));
    const double a_d = std::min(1.0, eta * max_step(lam, dlam));
    x += a_p * dx;
    s += a_p * ds;
    nu += a_d * dnu;
    lam += a_d * dlam;
    s = s.cwiseMax(1e-300);
    lam = lam.cwiseMax(1e-300);
  }

  if (!converged) {
    x = best_x;
    nu = best_nu;
    lam = best_lam;
    s = best_s;
  }

  // Polish whenever the iterate is close enough for the active-set guess to
  // make sense; this also produces exact zero slack/multiplier pairs.
  Residuals res = contract_residuals(qp, inst.b_eq, inst.h_in, x, nu, lam);
  if (converged || res.max() <= std::sqrt(opts.tol)) {
    Vec px, pnu, plam;
    Residuals pres;
    Vec s_now = inst.h_in - qp.A_in * x;
    if (polish(qp, inst.b_eq, inst.h_in, s_now, x, lam, opts.tol, px, pnu, plam, pres)) {
      x = px;
      nu = pnu;
      lam = plam;
      res = pres;
    }
  }

  sol.x = x;
  sol.nu = nu;
  sol.lambda = lam;
  sol.residuals = res;
  sol.iterations = it;
  sol.objective = primal_objective(inst, sol.x);
  if (res.max() <= opts.tol && lam.minCoeff() >= -1e-9) {
    sol.status = SolveStatus::optimal;
  } else {
    // Primal residual stuck far above tolerance with diverging duals is the
    // signature of an infeasible restriction (only reachable when the
    // feasibility augmentation was skipped, e.g. UC pattern enumeration).
    const double primal = std::max(res.primal_eq, res.primal_in);
    sol.status = (primal > std::sqrt(opts.tol) && inf_norm(lam) > 1e6)
                     ? SolveStatus::infeasible
                     : SolveStatus::numerical;
  }
  return sol;
}

}  // namespace lme
