#include "lme/qp.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "lme/errors.hpp"

namespace lme {

namespace {

struct EffectiveBounds {
  Vec lo, hi;  // per period; equal entries become pin rows
};

// Materialize per-period box bounds for generator-like devices. UC devices
// must carry a fixed commitment by the time assembly runs.
EffectiveBounds generator_bounds(const Device& d, int T, size_t dev_index) {
  return std::visit(
      [&](const auto& dev) -> EffectiveBounds {
        using Ty = std::decay_t<decltype(dev)>;
        if constexpr (std::is_same_v<Ty, Storage>) {
          throw DataError("generator_bounds called on storage");
        } else if constexpr (std::is_same_v<Ty, UCGenerator>) {
          if (!dev.commitment)
            throw DataError("devices[" + std::to_string(dev_index) +
                            "]: UC generator has no fixed commitment; resolve it "
                            "with solve_uc before assembling");
          EffectiveBounds b{Vec(T), Vec(T)};
          for (int t = 0; t < T; ++t) {
            if ((*dev.commitment)[t]) {
              b.lo[t] = std::max(dev.g_min[t], dev.min_output_fraction * dev.g_max[t]);
              b.hi[t] = dev.g_max[t];
            } else {
              b.lo[t] = b.hi[t] = 0.0;  // pinned off
            }
          }
          return b;
        } else {
          return {dev.g_min, dev.g_max};
        }
      },
      d);
}

}  // namespace

Mat VariableLayout::gather_outputs(const Vec& x) const {
  Mat G(horizon, static_cast<int>(device.size()));
  for (size_t j = 0; j < device.size(); ++j)
    for (int t = 0; t < horizon; ++t) G(t, static_cast<int>(j)) = x[output_index(j, t)];
  return G;
}

ParametricQP assemble(const Network& net) {
  const int T = net.horizon;
  const int n = net.n_nodes;
  const int m = net.n_lines();
  const int k = net.n_devices();
  const double h = net.period_hours;

  ParametricQP qp;
  qp.n_nodes = n;
  qp.horizon = T;
  qp.period_hours = h;

  // --- variable layout: device-major, outputs first, then storage internals
  VariableLayout& lay = qp.layout;
  lay.horizon = T;
  lay.device.resize(k);
  int off = 0;
  for (int j = 0; j < k; ++j) {
    lay.device[j].output = off;
    off += T;
    if (std::holds_alternative<Storage>(net.devices[j])) {
      lay.device[j].charge = off;
      off += T;
      lay.device[j].discharge = off;
      off += T;
      lay.device[j].soc = off;
      off += T;
    }
  }
  lay.nx = off;
  const int nx = off;

  // --- objective and emissions vector
  std::vector<Eigen::Triplet<double>> Ht;
  qp.q = Vec::Zero(nx);
  qp.emis_vec = Vec::Zero(nx);
  for (int j = 0; j < k; ++j) {
    std::visit(
        [&](const auto& dev) {
          using Ty = std::decay_t<decltype(dev)>;
          if constexpr (std::is_same_v<Ty, Storage>) {
            if (net.aux_reg != 0.0) {
              for (int t = 0; t < T; ++t) {
                const double r = 2.0 * net.aux_reg * h;
                Ht.emplace_back(lay.output_index(j, t), lay.output_index(j, t), r);
                Ht.emplace_back(lay.charge_index(j, t), lay.charge_index(j, t), r);
                Ht.emplace_back(lay.discharge_index(j, t), lay.discharge_index(j, t), r);
                Ht.emplace_back(lay.soc_index(j, t), lay.soc_index(j, t), r);
              }
            }
          } else {
            for (int t = 0; t < T; ++t) {
              const int ix = lay.output_index(j, t);
              if (dev.cost_quad != 0.0) Ht.emplace_back(ix, ix, 2.0 * dev.cost_quad * h);
              qp.q[ix] = dev.cost_lin * h;
              qp.emis_vec[ix] = dev.emis_rate;
            }
          }
        },
        net.devices[j]);
  }
  qp.H.resize(nx, nx);
  qp.H.setFromTriplets(Ht.begin(), Ht.end());

  // --- equality rows ---
  std::vector<Eigen::Triplet<double>> Aeq, BD;
  std::vector<double> beq0;
  auto eq_row = [&](RowTag tag) {
    qp.eq_tags.push_back(tag);
    beq0.push_back(0.0);
    return static_cast<int>(beq0.size()) - 1;
  };

  // Power balance per period: sum_j G_{tj} = sum_i d_{ti}.
  for (int t = 0; t < T; ++t) {
    const int r = eq_row({RowTag::Kind::balance, -1, t, -1});
    for (int j = 0; j < k; ++j) Aeq.emplace_back(r, lay.output_index(j, t), 1.0);
    for (int i = 0; i < n; ++i) BD.emplace_back(r, t * n + i, 1.0);
  }

  // Device equality blocks.
  for (int j = 0; j < k; ++j) {
    if (const auto* st = std::get_if<Storage>(&net.devices[j])) {
      const double eta = st->efficiency;
      // Output split g_t - delta_t + gamma_t = 0.
      for (int t = 0; t < T; ++t) {
        const int r = eq_row({RowTag::Kind::split, j, t, -1});
        Aeq.emplace_back(r, lay.output_index(j, t), 1.0);
        Aeq.emplace_back(r, lay.discharge_index(j, t), -1.0);
        Aeq.emplace_back(r, lay.charge_index(j, t), 1.0);
      }
      // SoC dynamics s_t - s_{t-1} - eta*gamma_t + delta_t/eta = 0; the
      // initial state folds into the constant term of the t = 0 row.
      for (int t = 0; t < T; ++t) {
        const int r = eq_row({RowTag::Kind::soc_dyn, j, t, -1});
        Aeq.emplace_back(r, lay.soc_index(j, t), 1.0);
        if (t > 0)
          Aeq.emplace_back(r, lay.soc_index(j, t - 1), -1.0);
        else
          beq0[r] = st->initial_soc;
        Aeq.emplace_back(r, lay.charge_index(j, t), -eta);
        Aeq.emplace_back(r, lay.discharge_index(j, t), 1.0 / eta);
      }
      if (st->terminal.kind != TerminalSoc::Kind::free) {
        const int r = eq_row({RowTag::Kind::soc_terminal, j, T - 1, -1});
        Aeq.emplace_back(r, lay.soc_index(j, T - 1), 1.0);
        beq0[r] = st->terminal.kind == TerminalSoc::Kind::equal_to_initial
                      ? st->initial_soc
                      : st->terminal.value;
      }
    } else {
      const auto bounds = generator_bounds(net.devices[j], T, j);
      for (int t = 0; t < T; ++t) {
        if (bounds.lo[t] == bounds.hi[t]) {
          const int r = eq_row({RowTag::Kind::pin, j, t, -1});
          Aeq.emplace_back(r, lay.output_index(j, t), 1.0);
          beq0[r] = bounds.lo[t];
        }
      }
    }
  }
  const int neq = static_cast<int>(beq0.size());
  qp.A_eq.resize(neq, nx);
  qp.A_eq.setFromTriplets(Aeq.begin(), Aeq.end());
  qp.b_eq0 = Eigen::Map<Vec>(beq0.data(), neq);
  qp.B_D.resize(neq, T * n);
  qp.B_D.setFromTriplets(BD.begin(), BD.end());

  // --- inequality rows ---
  std::vector<Eigen::Triplet<double>> Ain, HD;
  std::vector<double> hin0;
  auto in_row = [&](RowTag tag, double rhs) {
    qp.in_tags.push_back(tag);
    hin0.push_back(rhs);
    return static_cast<int>(hin0.size()) - 1;
  };

  // Line flow limits per period, two-sided:
  //   forward  F(d_t - B g_t) <= u  ->  -FB g <= u - F d
  //   reverse -F(d_t - B g_t) <= u  ->  +FB g <= u + F d
  for (int t = 0; t < T; ++t) {
    for (int dir = 0; dir < 2; ++dir) {
      const double sgn = dir == 0 ? -1.0 : 1.0;  // sign on the generation term
      for (int l = 0; l < m; ++l) {
        if (std::isinf(net.line_limits[l])) continue;
        const int r = in_row({dir == 0 ? RowTag::Kind::flow_fwd : RowTag::Kind::flow_rev,
                              -1, t, l},
                             net.line_limits[l]);
        for (int j = 0; j < k; ++j) {
          const double f = net.ptdf(l, net.device_node[j]);
          if (f != 0.0) Ain.emplace_back(r, lay.output_index(j, t), sgn * f);
        }
        for (int i = 0; i < n; ++i) {
          const double f = net.ptdf(l, i);
          if (f != 0.0) HD.emplace_back(r, t * n + i, sgn * f);
        }
      }
    }
  }

  // Device inequality blocks.
  for (int j = 0; j < k; ++j) {
    if (const auto* st = std::get_if<Storage>(&net.devices[j])) {
      auto box = [&](RowTag::Kind lo_kind, RowTag::Kind hi_kind, auto index, double hi) {
        for (int t = 0; t < T; ++t) {
          const int r = in_row({lo_kind, j, t, -1}, 0.0);
          Ain.emplace_back(r, index(t), -1.0);
        }
        for (int t = 0; t < T; ++t) {
          const int r = in_row({hi_kind, j, t, -1}, hi);
          Ain.emplace_back(r, index(t), 1.0);
        }
      };
      box(RowTag::Kind::charge_lo, RowTag::Kind::charge_hi,
          [&](int t) { return lay.charge_index(j, t); }, st->power);
      box(RowTag::Kind::discharge_lo, RowTag::Kind::discharge_hi,
          [&](int t) { return lay.discharge_index(j, t); }, st->power);
      box(RowTag::Kind::soc_lo, RowTag::Kind::soc_hi,
          [&](int t) { return lay.soc_index(j, t); }, st->capacity);
    } else {
      const auto bounds = generator_bounds(net.devices[j], T, j);
      for (int t = 0; t < T; ++t) {
        if (bounds.lo[t] == bounds.hi[t]) continue;  // pinned
        const int r = in_row({RowTag::Kind::box_lo, j, t, -1}, -bounds.lo[t]);
        Ain.emplace_back(r, lay.output_index(j, t), -1.0);
      }
      for (int t = 0; t < T; ++t) {
        if (bounds.lo[t] == bounds.hi[t] || std::isinf(bounds.hi[t])) continue;
        const int r = in_row({RowTag::Kind::box_hi, j, t, -1}, bounds.hi[t]);
        Ain.emplace_back(r, lay.output_index(j, t), 1.0);
      }
      if (const auto* rg = std::get_if<RampGenerator>(&net.devices[j])) {
        for (int t = 0; t + 1 < T; ++t) {
          const int r = in_row({RowTag::Kind::ramp_up, j, t, -1}, rg->ramp);
          Ain.emplace_back(r, lay.output_index(j, t + 1), 1.0);
          Ain.emplace_back(r, lay.output_index(j, t), -1.0);
        }
        for (int t = 0; t + 1 < T; ++t) {
          const int r = in_row({RowTag::Kind::ramp_dn, j, t, -1}, rg->ramp);
          Ain.emplace_back(r, lay.output_index(j, t), 1.0);
          Ain.emplace_back(r, lay.output_index(j, t + 1), -1.0);
        }
      }
    }
  }
  const int nin = static_cast<int>(hin0.size());
  qp.A_in.resize(nin, nx);
  qp.A_in.setFromTriplets(Ain.begin(), Ain.end());
  qp.h_in0 = Eigen::Map<Vec>(hin0.data(), nin);
  qp.H_D.resize(nin, T * n);
  qp.H_D.setFromTriplets(HD.begin(), HD.end());

  qp.H.makeCompressed();
  qp.A_eq.makeCompressed();
  qp.A_in.makeCompressed();
  qp.B_D.makeCompressed();
  qp.H_D.makeCompressed();
  return qp;
}

QPInstance instantiate(const ParametricQP& pqp, const DemandSchedule& D) {
  if (D.periods() != pqp.horizon || D.nodes() != pqp.n_nodes)
    throw DataError("instantiate: demand is " + std::to_string(D.periods()) + "x" +
                    std::to_string(D.nodes()) + ", expected " +
                    std::to_string(pqp.horizon) + "x" + std::to_string(pqp.n_nodes));
  if (!D.values.allFinite()) throw DataError("instantiate: demand entries must be finite");
  QPInstance inst;
  inst.qp = &pqp;
  const Vec d = D.stacked();
  inst.b_eq = pqp.b_eq0 + pqp.B_D * d;
  inst.h_in = pqp.h_in0 + pqp.H_D * d;
  return inst;
}

void write_triplet_dump(const ParametricQP& qp, std::ostream& os) {
  os << "# parametric qp, sparse triplets: <matrix> <row> <col> <value>\n";
  os << "dims nx " << qp.nx() << " neq " << qp.n_eq() << " nin " << qp.n_in()
     << " nd " << qp.horizon * qp.n_nodes << "\n";
  auto dump = [&os](const char* name, const SpMat& M) {
    for (int c = 0; c < M.outerSize(); ++c)
      for (SpMat::InnerIterator it(M, c); it; ++it)
        os << name << " " << it.row() << " " << it.col() << " " << it.value() << "\n";
  };
  dump("H", qp.H);
  dump("A_eq", qp.A_eq);
  dump("B_D", qp.B_D);
  dump("A_in", qp.A_in);
  dump("H_D", qp.H_D);
  for (int i = 0; i < qp.nx(); ++i)
    if (qp.q[i] != 0.0) os << "q " << i << " 0 " << qp.q[i] << "\n";
  for (int i = 0; i < qp.n_eq(); ++i)
    if (qp.b_eq0[i] != 0.0) os << "b_eq0 " << i << " 0 " << qp.b_eq0[i] << "\n";
  for (int i = 0; i < qp.n_in(); ++i)
    if (qp.h_in0[i] != 0.0) os << "h_in0 " << i << " 0 " << qp.h_in0[i] << "\n";
  for (int i = 0; i < qp.nx(); ++i)
    if (qp.emis_vec[i] != 0.0) os << "emis " << i << " 0 " << qp.emis_vec[i] << "\n";
}

}  // namespace lme
