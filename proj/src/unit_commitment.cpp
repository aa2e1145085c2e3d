#include "lme/unit_commitment.hpp"

#include <cmath>
#include <limits>

#include "lme/errors.hpp"

namespace lme {

namespace {

PrimalDualSolution solve_committed(const Network& net, const DemandSchedule& D,
                                   const SolverOptions& opts) {
  ParametricQP qp = assemble(net);
  QPInstance inst = instantiate(qp, D);
  return solve(inst, opts);
}

}  // namespace

std::vector<int> uncommitted_uc_devices(const Network& net) {
  std::vector<int> out;
  for (int j = 0; j < net.n_devices(); ++j)
    if (const auto* uc = std::get_if<UCGenerator>(&net.devices[j]))
      if (!uc->commitment) out.push_back(j);
  return out;
}

Network with_commitment(const Network& net, const std::vector<std::vector<int>>& commitment) {
  Network out = net;
  size_t u = 0;
  for (auto& d : out.devices) {
    if (auto* uc = std::get_if<UCGenerator>(&d)) {
      if (u >= commitment.size())
        throw DataError("with_commitment: fewer commitment vectors than UC devices");
      if (commitment[u].size() != static_cast<size_t>(out.horizon))
        throw DataError("with_commitment: commitment length != horizon");
      uc->commitment = commitment[u];
      ++u;
    }
  }
  if (u != commitment.size())
    throw DataError("with_commitment: more commitment vectors than UC devices");
  return out;
}

UcResult solve_uc(const Network& net, const DemandSchedule& D, const SolverOptions& opts) {
  const std::vector<int> open = uncommitted_uc_devices(net);
  if (open.empty())
    throw DataError("solve_uc: no UC generator with unresolved commitment");
  const int T = net.horizon;
  const int bits = T * static_cast<int>(open.size());

  UcResult result;
  result.objective = std::numeric_limits<double>::infinity();

  auto commitment_of = [&](const Network& n) {
    std::vector<std::vector<int>> c;
    for (const auto& d : n.devices)
      if (const auto* uc = std::get_if<UCGenerator>(&d)) c.push_back(*uc->commitment);
    return c;
  };

  if (opts.uc_mode == UcMode::exhaustive) {
    if (bits > 20)
      throw DataError("solve_uc: exhaustive mode refused for T*#UC = " +
                      std::to_string(bits) + " > 20 commitment bits");
    for (unsigned long pattern = 0; pattern < (1ul << bits); ++pattern) {
      Network cand = net;
      int bit = 0;
      for (int j : open) {
        auto& uc = std::get<UCGenerator>(cand.devices[j]);
        std::vector<int> on(T);
        for (int t = 0; t < T; ++t, ++bit) on[t] = (pattern >> bit) & 1u;
        uc.commitment = on;
      }
      PrimalDualSolution sol = solve_committed(cand, D, opts);
      ++result.patterns_tried;
      if (sol.status != SolveStatus::optimal) continue;  // infeasible pattern
      if (sol.objective < result.objective) {
        result.objective = sol.objective;
        result.sol = std::move(sol);
        result.committed_net = std::move(cand);
      }
    }
    if (!std::isfinite(result.objective))
      throw SolverError("solve_uc: no feasible commitment pattern found");
  } else if (opts.uc_mode == UcMode::heuristic_rounding) {
    // Relax: UC devices become plain generators on [0, g_max].
    Network relaxed = net;
    for (int j : open) {
      const auto& uc = std::get<UCGenerator>(relaxed.devices[j]);
      StaticGenerator g;
      g.g_min = Vec::Zero(T);
      g.g_max = uc.g_max;
      g.cost_quad = uc.cost_quad;
      g.cost_lin = uc.cost_lin;
      g.emis_rate = uc.emis_rate;
      g.name = uc.name;
      relaxed.devices[j] = g;
    }
    ParametricQP rqp = assemble(relaxed);
    PrimalDualSolution rsol = solve(instantiate(rqp, D), opts);
    ++result.patterns_tried;
    if (rsol.status != SolveStatus::optimal)
      throw SolverError("solve_uc: relaxation did not solve to optimality");

    Network cand = net;
    for (int j : open) {
      auto& uc = std::get<UCGenerator>(cand.devices[j]);
      std::vector<int> on(T);
      for (int t = 0; t < T; ++t) {
        const double g = rsol.x[rqp.layout.output_index(j, t)];
        on[t] = g >= 0.5 * uc.min_output_fraction * uc.g_max[t] ? 1 : 0;
      }
      uc.commitment = on;
    }
    PrimalDualSolution sol = solve_committed(cand, D, opts);
    ++result.patterns_tried;
    if (sol.status != SolveStatus::optimal)
      throw SolverError("solve_uc: rounded commitment is not solvable; try exhaustive mode");
    result.objective = sol.objective;
    result.sol = std::move(sol);
    result.committed_net = std::move(cand);
  } else {
    throw DataError("solve_uc: uc_mode fixed cannot resolve open commitments");
  }

  result.commitment = commitment_of(result.committed_net);
  return result;
}

}  // namespace lme
