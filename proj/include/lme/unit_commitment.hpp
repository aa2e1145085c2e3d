// Resolution of unit-commitment integers by fix-and-differentiate: pick a
// commitment, solve the convex restriction, let downstream sensitivities
// differentiate that restriction.
#pragma once

#include "lme/solver.hpp"

namespace lme {

struct UcResult {
  std::vector<std::vector<int>> commitment;  // per UC device (device order), length T
  Network committed_net;                     // input net with commitments fixed
  PrimalDualSolution sol;
  double objective = 0.0;
  int patterns_tried = 0;
};

/// Copy of `net` with the given on/off vectors written into its UC devices
/// (in UC-device order).
Network with_commitment(const Network& net, const std::vector<std::vector<int>>& commitment);

/// Indices of UC devices without a fixed commitment.
std::vector<int> uncommitted_uc_devices(const Network& net);

/// Resolve commitments and solve. Mode exhaustive enumerates all 2^(T*#UC)
/// patterns (refused above T*#UC = 20), skipping infeasible ones; mode
/// heuristic_rounding solves the [0, g_max] relaxation and commits periods
/// with output >= 0.5 * min_output_fraction * g_max. `net` must already be
/// validated and augmented.
UcResult solve_uc(const Network& net, const DemandSchedule& D, const SolverOptions& opts);

}  // namespace lme
