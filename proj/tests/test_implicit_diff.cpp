#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lme/errors.hpp"
#include "lme/implicit_diff.hpp"
#include "test_util.hpp"

using namespace lme;
using namespace lme::testing;

namespace {

Network single_node(std::vector<Device> devices, int T) {
  Network net;
  net.n_nodes = 1;
  net.horizon = T;
  net.ptdf = Mat::Zero(0, 1);
  net.line_limits = Vec(0);
  net.devices = std::move(devices);
  net.device_node.assign(net.devices.size(), 0);
  return ensure_feasible_and_unique(net);
}

struct Solved {
  Network net;
  ParametricQP pqp;
  DemandSchedule D;
  PrimalDualSolution sol;
};

Solved solve_single(std::vector<Device> devices, DemandSchedule D, int T) {
  Solved s;
  s.net = single_node(std::move(devices), T);
  s.D = std::move(D);
  s.pqp = assemble(s.net);
  s.sol = solve(instantiate(s.pqp, s.D));
  REQUIRE(s.sol.status == SolveStatus::optimal);
  return s;
}

double max_rel_gap(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (Eigen::Index t = 0; t < a.rows(); ++t)
    for (Eigen::Index i = 0; i < a.cols(); ++i)
      worst = std::max(worst, std::abs(a(t, i) - b(t, i)) / (1.0 + std::abs(b(t, i))));
  return worst;
}

}  // namespace

TEST_CASE("emissions: toy dispatch is emission free") {
  Solved s = solve_single({toy_network().devices[0], toy_network().devices[1],
                           toy_network().devices[2]},
                          toy_demand(), 2);
  auto [total, per_period] = emissions(s.pqp, s.sol);
  CHECK(std::abs(total) < 1e-6);
  CHECK(per_period.size() == 2);
}

TEST_CASE("emissions: linear in dispatch and period hours") {
  Solved s = solve_single({make_gen(2, 10.0, 1.0, 0.5)}, demand_of({5.0, 5.0}), 2);
  auto [total, per_period] = emissions(s.pqp, s.sol);
  CHECK(per_period[0] == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(per_period[1] == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(total == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(total == doctest::Approx(per_period.sum()).epsilon(1e-12));
}

TEST_CASE("emissions: zero rates give zero totals") {
  Solved s = solve_single({make_gen(2, 10.0, 1.0, 0.0), make_gen(2, 4.0, 0.5, 0.0)},
                          demand_of({5.0, 7.0}), 2);
  CHECK(emissions(s.pqp, s.sol).first == 0.0);
}

TEST_CASE("classify: interior generator has both box rows inactive") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5)}, demand_of({5.0}), 1);
  ActiveSet aset = classify_active_set(s.pqp, s.D, s.sol);
  for (int r = 0; r < s.pqp.n_in(); ++r) {
    if (s.pqp.in_tags[r].device != 0) continue;
    CHECK(std::find(aset.inactive.begin(), aset.inactive.end(), r) != aset.inactive.end());
  }
}

TEST_CASE("classify: saturated generator is active and non-degenerate") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5), make_gen(1, 10.0, 2.0, 1.0)},
                          demand_of({12.0}), 1);
  ActiveSet aset = classify_active_set(s.pqp, s.D, s.sol);
  bool found = false;
  for (int r = 0; r < s.pqp.n_in(); ++r) {
    const auto& tag = s.pqp.in_tags[r];
    if (tag.device == 0 && tag.kind == RowTag::Kind::box_hi) {
      found = true;
      CHECK(std::find(aset.active.begin(), aset.active.end(), r) != aset.active.end());
      CHECK(std::find(aset.degenerate.begin(), aset.degenerate.end(), r) ==
            aset.degenerate.end());
    }
  }
  CHECK(found);
}

TEST_CASE("classify: equal-cost tie binds with zero multiplier") {
  // Equal linear costs, caps (5, 20), demand 10: the regularizer splits the
  // dispatch (5, 5), so generator 0 touches its cap with lambda = 0. Direct
  // hand-KKT: stationarity pins the price at both marginal costs at once.
  Solved s = solve_single({make_gen(1, 5.0, 1.0, 0.5), make_gen(1, 20.0, 1.0, 1.0)},
                          demand_of({10.0}), 1);
  CHECK(s.sol.x[s.pqp.layout.output_index(0, 0)] == doctest::Approx(5.0).epsilon(1e-6));
  ActiveSet aset = classify_active_set(s.pqp, s.D, s.sol);
  bool degenerate_upper = false;
  for (int r : aset.degenerate) {
    const auto& tag = s.pqp.in_tags[r];
    if (tag.device == 0 && tag.kind == RowTag::Kind::box_hi) degenerate_upper = true;
  }
  CHECK(degenerate_upper);
}

TEST_CASE("build_kkt_jacobians: analytic 2x2 system") {
  // min x^2/2 s.t. x = d: Jx = [[1,1],[1,0]], JD = [0,-1]', dx*/dd = 1.
  ParametricQP qp;
  qp.n_nodes = 1;
  qp.horizon = 1;
  qp.period_hours = 1.0;
  qp.H = SpMat(1, 1);
  qp.H.insert(0, 0) = 1.0;
  qp.q = Vec::Zero(1);
  qp.A_eq = SpMat(1, 1);
  qp.A_eq.insert(0, 0) = 1.0;
  qp.b_eq0 = Vec::Zero(1);
  qp.B_D = SpMat(1, 1);
  qp.B_D.insert(0, 0) = 1.0;
  qp.A_in = SpMat(0, 1);
  qp.h_in0 = Vec(0);
  qp.H_D = SpMat(0, 1);
  qp.layout.nx = 1;
  qp.layout.horizon = 1;
  qp.layout.device = {DeviceSlice{0, -1, -1, -1}};
  qp.emis_vec = Vec::Ones(1);
  qp.eq_tags = {{RowTag::Kind::balance, -1, 0, -1}};

  DemandSchedule D;
  D.values = Mat::Constant(1, 1, 2.0);
  PrimalDualSolution sol;
  sol.x = Vec::Constant(1, 2.0);
  sol.nu = Vec::Constant(1, -2.0);
  sol.lambda = Vec(0);
  sol.status = SolveStatus::optimal;

  ActiveSet aset;  // no inequalities
  KktJacobians jac = build_kkt_jacobians(qp, D, sol, aset);
  Mat Jx(jac.Jx);
  CHECK(Jx(0, 0) == 1.0);
  CHECK(Jx(0, 1) == 1.0);
  CHECK(Jx(1, 0) == 1.0);
  CHECK(Jx(1, 1) == 0.0);
  Mat JD(jac.JD);
  CHECK(JD(0, 0) == 0.0);
  CHECK(JD(1, 0) == -1.0);
  Mat dxdd = solution_jacobian(jac, 1);
  CHECK(dxdd(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("build_kkt_jacobians: variable pinned by an active bound") {
  // min (x^2+y^2)/2 s.t. x + y = d, y <= 0.3 (active): dx/dd = 1, dy/dd = 0.
  ParametricQP qp;
  qp.n_nodes = 1;
  qp.horizon = 1;
  qp.period_hours = 1.0;
  qp.H = SpMat(2, 2);
  qp.H.insert(0, 0) = 1.0;
  qp.H.insert(1, 1) = 1.0;
  qp.q = Vec::Zero(2);
  qp.A_eq = SpMat(1, 2);
  qp.A_eq.insert(0, 0) = 1.0;
  qp.A_eq.insert(0, 1) = 1.0;
  qp.b_eq0 = Vec::Zero(1);
  qp.B_D = SpMat(1, 1);
  qp.B_D.insert(0, 0) = 1.0;
  qp.A_in = SpMat(1, 2);
  qp.A_in.insert(0, 1) = 1.0;
  qp.h_in0 = Vec::Constant(1, 0.3);
  qp.H_D = SpMat(1, 1);
  qp.layout.nx = 2;
  qp.layout.horizon = 1;
  qp.layout.device = {DeviceSlice{0, -1, -1, -1}, DeviceSlice{1, -1, -1, -1}};
  qp.emis_vec = Vec::Zero(2);
  qp.eq_tags = {{RowTag::Kind::balance, -1, 0, -1}};
  qp.in_tags = {{RowTag::Kind::box_hi, 1, 0, -1}};

  DemandSchedule D;
  D.values = Mat::Constant(1, 1, 1.0);
  PrimalDualSolution sol;
  sol.x = Vec(2);
  sol.x << 0.7, 0.3;
  sol.nu = Vec::Constant(1, -0.7);
  sol.lambda = Vec::Constant(1, 0.4);
  sol.status = SolveStatus::optimal;

  ActiveSet aset = classify_active_set(qp, D, sol);
  REQUIRE(aset.active.size() == 1);
  KktJacobians jac = build_kkt_jacobians(qp, D, sol, aset);
  Mat dxdd = solution_jacobian(jac, 2);
  CHECK(dxdd(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dxdd(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("build_kkt_jacobians: redundant active rows raise SingularJacobian") {
  // Force an impossible active set: more active rows than variables.
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5)}, demand_of({5.0}), 1);
  ActiveSet fake;
  for (int r = 0; r < s.pqp.n_in(); ++r) fake.active.push_back(r);
  try {
    build_kkt_jacobians(s.pqp, s.D, s.sol, fake);
    FAIL("expected SingularJacobian");
  } catch (const SingularJacobian& e) {
    CHECK(!e.dependent_rows.empty());
  }
}

TEST_CASE("reduced and full complementarity forms agree") {
  RandomInstance ri = random_instance(123);
  Network net = ensure_feasible_and_unique(ri.net);
  ParametricQP pqp = assemble(net);
  PrimalDualSolution sol = solve(instantiate(pqp, ri.D));
  REQUIRE(sol.status == SolveStatus::optimal);

  ActiveSet aset = classify_active_set(pqp, ri.D, sol);
  REQUIRE(aset.degenerate.empty());
  Mat J_red = solution_jacobian(build_kkt_jacobians(pqp, ri.D, sol, aset), pqp.nx());
  Mat J_full = solution_jacobian(build_kkt_jacobians_full(pqp, ri.D, sol), pqp.nx());
  CHECK((J_red - J_full).cwiseAbs().maxCoeff() < 1e-8);

  LmeOptions red, full;
  full.use_full_form = true;
  Mat L_red = compute_lmes(pqp, ri.D, sol, red).lambda;
  Mat L_full = compute_lmes(pqp, ri.D, sol, full).lambda;
  CHECK((L_red - L_full).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("merit order LMEs: cheap generator marginal at demand 5") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5), make_gen(1, 10.0, 2.0, 1.0)},
                          demand_of({5.0}), 1);
  LmeResult lme = compute_lmes(s.pqp, s.D, s.sol);
  CHECK_FALSE(lme.degenerate);
  CHECK(lme.lambda(0, 0) == doctest::Approx(0.5).epsilon(1e-8));
  Mat fd = finite_difference_lmes(s.net, s.D, 1e-3);
  CHECK(std::abs(fd(0, 0) - lme.lambda(0, 0)) < 1e-6);
}

TEST_CASE("merit order LMEs: saturated cheap generator hands the margin over") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5), make_gen(1, 10.0, 2.0, 1.0)},
                          demand_of({12.0}), 1);
  LmeResult lme = compute_lmes(s.pqp, s.D, s.sol);
  CHECK(lme.lambda(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
  Mat fd = finite_difference_lmes(s.net, s.D, 1e-3);
  CHECK(std::abs(fd(0, 0) - lme.lambda(0, 0)) < 1e-6);
}

TEST_CASE("toy example: dynamic LMEs vanish") {
  Network net = ensure_feasible_and_unique(toy_network());
  ParametricQP pqp = assemble(net);
  DemandSchedule D = toy_demand();
  PrimalDualSolution sol = solve(instantiate(pqp, D));
  REQUIRE(sol.status == SolveStatus::optimal);
  LmeResult lme = compute_lmes(pqp, D, sol);
  CHECK(std::abs(lme.lambda(0, 0)) < 1e-3);
  CHECK(std::abs(lme.lambda(1, 0)) < 1e-3);
  CHECK(lme.adjoint_residual <= 1e-8);

  Mat fd = finite_difference_lmes(net, D, 1e-3);
  CHECK(std::abs(fd(0, 0)) < 1e-6);
  CHECK(std::abs(fd(1, 0)) < 1e-6);
}

TEST_CASE("toy example: static approximation produces (0, 500) and flags") {
  Network net = ensure_feasible_and_unique(toy_network());
  ParametricQP pqp = assemble(net);
  DemandSchedule D = toy_demand();
  PrimalDualSolution sol = solve(instantiate(pqp, D));
  REQUIRE(sol.status == SolveStatus::optimal);

  StaticApproxResult st = static_approximation(net, pqp, D, sol);
  CHECK(std::abs(st.lmes.lambda(0, 0)) < 1e-3);
  CHECK(std::abs(st.lmes.lambda(1, 0) - 500.0) < 1e-3);
  // The restriction sits at a feasibility-boundary kink; this must be loud.
  CHECK(st.lmes.degenerate);
  // Pinned devices kept their dynamic schedule.
  const Mat Gs = st.pqp.layout.gather_outputs(st.sol.x);
  CHECK(Gs(0, 2) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(Gs(1, 2) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("degenerate merit-order breakpoint is flagged and right-sided") {
  // Demand exactly at generator 0's capacity: the emissions response has a
  // kink; the reported value is the feasible-increase side (generator 1).
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5), make_gen(1, 10.0, 2.0, 1.0)},
                          demand_of({10.0}), 1);
  LmeResult lme = compute_lmes(s.pqp, s.D, s.sol);
  CHECK(lme.degenerate);
  CHECK(lme.lambda(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("gradient check: IFT matches central differences across seeds") {
  int flagged = 0, checked = 0;
  for (unsigned seed = 200; seed < 225; ++seed) {
    RandomInstance ri = random_instance(seed);
    Network net = ensure_feasible_and_unique(ri.net);
    ParametricQP pqp = assemble(net);
    PrimalDualSolution sol = solve(instantiate(pqp, ri.D));
    REQUIRE(sol.status == SolveStatus::optimal);
    LmeResult lme = compute_lmes(pqp, ri.D, sol);
    if (lme.degenerate) {
      ++flagged;
      continue;
    }
    ++checked;
    Mat fd = finite_difference_lmes(net, ri.D, 1e-3);
    CHECK(max_rel_gap(lme.lambda, fd) <= 1e-4);
    CHECK(lme.adjoint_residual <= 1e-8);
  }
  CHECK(checked >= 20);  // the flag rate must stay small
}

TEST_CASE("first-order consistency within the stable active set") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5, 0.4), make_gen(1, 10.0, 2.0, 1.0, 0.7)},
                          demand_of({5.0}), 1);
  LmeResult lme = compute_lmes(s.pqp, s.D, s.sol);
  auto energy = [&](double shift) {
    DemandSchedule Dp = s.D;
    Dp.values(0, 0) += shift;
    SolverOptions opts;
    opts.tol = 1e-10;
    PrimalDualSolution sp = solve(instantiate(s.pqp, Dp), opts);
    REQUIRE(sp.status == SolveStatus::optimal);
    return emissions(s.pqp, sp).first;
  };
  const double E0 = emissions(s.pqp, s.sol).first;
  for (double delta : {1e-3, 1e-4}) {
    const double err = std::abs(energy(delta) - E0 - lme.lambda(0, 0) * delta);
    CHECK(err <= 10.0 * delta * delta + 1e-9);
  }
}

TEST_CASE("uncongested network has spatially uniform LMEs") {
  Network net;
  net.n_nodes = 3;
  net.horizon = 2;
  net.lines = {{0, 1, 1.0, 1e18}, {1, 2, 1.0, 1e18}};
  for (auto& l : net.lines) l.rating = std::numeric_limits<double>::infinity();
  net.ptdf = compute_ptdf(net.lines, 3, 2);
  net.line_limits = Vec::Constant(2, std::numeric_limits<double>::infinity());
  net.devices = {make_gen(2, 10.0, 1.0, 0.5), make_gen(2, 10.0, 2.0, 1.0),
                 make_gen(2, 10.0, 3.0, 0.2)};
  net.device_node = {0, 1, 2};
  net = ensure_feasible_and_unique(net);
  ParametricQP pqp = assemble(net);
  CHECK(pqp.n_in() == 2 * 3 * 2 + 2 * 3);  // boxes only: flow rows dropped (slack upper dropped too)

  DemandSchedule D;
  D.values = Mat(2, 3);
  D.values << 2.0, 1.0, 2.0,
              4.0, 3.0, 4.0;
  PrimalDualSolution sol = solve(instantiate(pqp, D));
  REQUIRE(sol.status == SolveStatus::optimal);
  LmeResult lme = compute_lmes(pqp, D, sol);
  for (int t = 0; t < 2; ++t) {
    CHECK(std::abs(lme.lambda(t, 0) - lme.lambda(t, 1)) < 1e-8);
    CHECK(std::abs(lme.lambda(t, 1) - lme.lambda(t, 2)) < 1e-8);
  }
}

TEST_CASE("static equals dynamic without dynamic devices") {
  RandomInstance ri = random_instance(321, /*allow_storage=*/false);
  bool has_ramp = false;
  for (const auto& d : ri.net.devices) has_ramp |= is_dynamic_device(d);
  REQUIRE_FALSE(has_ramp);

  Network net = ensure_feasible_and_unique(ri.net);
  ParametricQP pqp = assemble(net);
  PrimalDualSolution sol = solve(instantiate(pqp, ri.D));
  REQUIRE(sol.status == SolveStatus::optimal);
  LmeResult dyn = compute_lmes(pqp, ri.D, sol);
  StaticApproxResult st = static_approximation(net, pqp, ri.D, sol);
  CHECK((dyn.lambda - st.lmes.lambda).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("storage transport equalizes LMEs across periods") {
  // One quadratic generator plus a lossless battery with headroom: the
  // battery arbitrages marginal units, so both periods see the generator's
  // emissions rate and the LMEs match the finite-difference oracle.
  StaticGenerator gen = make_gen(2, 20.0, 10.0, 0.8, 0.5);
  Storage bat;
  bat.capacity = 20.0;
  bat.power = 10.0;
  bat.efficiency = 1.0;
  bat.initial_soc = 10.0;
  bat.terminal = TerminalSoc::equal_to_initial_();  // pure arbitrage
  Solved s = solve_single({gen, bat}, demand_of({4.0, 8.0}), 2);

  // Marginal costs equalize: generator output (6, 6), battery (-2, 2).
  const Mat G = s.pqp.layout.gather_outputs(s.sol.x);
  CHECK(G(0, 0) == doctest::Approx(6.0).epsilon(1e-4));
  CHECK(G(1, 0) == doctest::Approx(6.0).epsilon(1e-4));

  LmeResult lme = compute_lmes(s.pqp, s.D, s.sol);
  CHECK_FALSE(lme.degenerate);
  CHECK(std::abs(lme.lambda(0, 0) - lme.lambda(1, 0)) < 1e-6);
  CHECK(lme.lambda(0, 0) == doctest::Approx(0.8).epsilon(1e-6));
  Mat fd = finite_difference_lmes(s.net, s.D, 1e-3);
  CHECK(max_rel_gap(lme.lambda, fd) < 1e-4);
}

TEST_CASE("idle storage leaves LMEs untouched") {
  // Flat demand, one generator, battery starting empty: no arbitrage value,
  // so the battery stays idle and static equals dynamic.
  StaticGenerator gen = make_gen(2, 20.0, 5.0, 0.6, 0.2);
  Storage bat;
  bat.capacity = 10.0;
  bat.power = 5.0;
  bat.efficiency = 1.0;
  bat.initial_soc = 0.0;
  Solved s = solve_single({gen, bat}, demand_of({6.0, 6.0}), 2);
  const Mat G = s.pqp.layout.gather_outputs(s.sol.x);
  CHECK(std::abs(G(0, 1)) < 1e-6);
  CHECK(std::abs(G(1, 1)) < 1e-6);

  LmeResult dyn = compute_lmes(s.pqp, s.D, s.sol);
  StaticApproxResult st = static_approximation(s.net, s.pqp, s.D, s.sol);
  CHECK((dyn.lambda - st.lmes.lambda).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("jitter option stays close on a smooth instance") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5, 0.3), make_gen(1, 10.0, 2.0, 1.0, 0.6)},
                          demand_of({5.0}), 1);
  LmeResult plain = compute_lmes(s.pqp, s.D, s.sol);
  LmeOptions jopts;
  jopts.jitter = 1e-6;
  jopts.seed = 42;
  LmeResult jittered = compute_lmes(s.pqp, s.D, s.sol, jopts);
  CHECK((plain.lambda - jittered.lambda).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("compute_lmes rejects non-optimal input") {
  Solved s = solve_single({make_gen(1, 10.0, 1.0, 0.5)}, demand_of({5.0}), 1);
  PrimalDualSolution bad = s.sol;
  bad.status = SolveStatus::numerical;
  CHECK_THROWS_AS(compute_lmes(s.pqp, s.D, bad), SolverError);
}
