// Lowering of a Network into one standard-form parametric QP:
//
//   minimize    1/2 x'Hx + q'x
//   subject to  A_eq x  = b_eq0 + B_D vec(D)
//               A_in x <= h_in0 + H_D vec(D)
//
// vec(D) stacks the TxN demand matrix row-major: entry (t, i) -> t*n + i.
//
// Row ordering is fixed so multiplier indices are stable across runs:
//   equalities:   balance rows t = 0..T-1, then per device in device order:
//                 storage split rows (t asc), storage soc dynamics (t asc),
//                 terminal-soc row if any; generator pin rows (periods with
//                 g_min_t == g_max_t or committed-off UC periods), t asc.
//   inequalities: per period t: forward flow rows (lines with finite rating,
//                 line order), then reverse flow rows; then per device in
//                 device order: box lower rows (unpinned t asc), box upper
//                 rows (t asc, finite bound), ramp-up rows, ramp-down rows;
//                 storage: charge lo, charge hi, discharge lo, discharge hi,
//                 soc lo, soc hi (each t asc).
#pragma once

#include <Eigen/SparseCore>

#include <iosfwd>

#include "lme/grid.hpp"

namespace lme {

using SpMat = Eigen::SparseMatrix<double>;

/// Where each device's variables live in the primal vector. Every device
/// output G_{tj} has exactly one index; storage adds charge/discharge/soc.
struct DeviceSlice {
  int output = -1;     // start of T output vars
  int charge = -1;     // start of T charge vars (storage only)
  int discharge = -1;
  int soc = -1;
};

struct VariableLayout {
  int nx = 0;
  int horizon = 0;
  std::vector<DeviceSlice> device;

  int output_index(int dev, int t) const { return device[dev].output + t; }
  int charge_index(int dev, int t) const { return device[dev].charge + t; }
  int discharge_index(int dev, int t) const { return device[dev].discharge + t; }
  int soc_index(int dev, int t) const { return device[dev].soc + t; }

  /// Gather the T x k dispatch matrix out of a primal vector.
  Mat gather_outputs(const Vec& x) const;
};

struct RowTag {
  enum class Kind {
    balance, split, soc_dyn, soc_terminal, pin,                    // equalities
    flow_fwd, flow_rev, box_lo, box_hi, ramp_up, ramp_dn,          // inequalities
    charge_lo, charge_hi, discharge_lo, discharge_hi, soc_lo, soc_hi
  };
  Kind kind;
  int device = -1;  // -1 for network rows
  int period = -1;
  int line = -1;
};

struct ParametricQP {
  SpMat H;        // nx x nx, PSD
  Vec q;          // nx
  SpMat A_eq;     // neq x nx
  Vec b_eq0;      // neq
  SpMat B_D;      // neq x (T*n)
  SpMat A_in;     // nin x nx
  Vec h_in0;      // nin
  SpMat H_D;      // nin x (T*n)
  VariableLayout layout;
  Vec emis_vec;   // nx, tCO2/MWh on outputs, zero on auxiliaries
  std::vector<RowTag> eq_tags;
  std::vector<RowTag> in_tags;
  int n_nodes = 0;
  int horizon = 0;
  double period_hours = 1.0;

  int nx() const { return static_cast<int>(q.size()); }
  int n_eq() const { return static_cast<int>(b_eq0.size()); }
  int n_in() const { return static_cast<int>(h_in0.size()); }
};

/// Concrete right-hand sides for one demand schedule. Matrices are shared
/// with the ParametricQP (no copies); keep it alive.
struct QPInstance {
  const ParametricQP* qp = nullptr;
  Vec b_eq;
  Vec h_in;
};

/// Lower a validated network to the parametric QP. UC devices must carry a
/// fixed commitment (see solve_uc); throws DataError otherwise.
ParametricQP assemble(const Network& net);

QPInstance instantiate(const ParametricQP& pqp, const DemandSchedule& D);

/// Debug dump in a sparse triplet text format (see README) for cross-checking
/// against external solvers.
void write_triplet_dump(const ParametricQP& pqp, std::ostream& os);

}  // namespace lme
