#include "lme/grid.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <limits>
#include <queue>
#include <sstream>

#include "lme/errors.hpp"

namespace lme {

namespace {

bool finite_vec(const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

}  // namespace

const std::string& device_name(const Device& d) {
  return std::visit([](const auto& dev) -> const std::string& { return dev.name; }, d);
}

void set_device_name(Device& d, std::string name) {
  std::visit([&](auto& dev) { dev.name = std::move(name); }, d);
}

double device_emis_rate(const Device& d) {
  return std::visit(
      [](const auto& dev) -> double {
        using T = std::decay_t<decltype(dev)>;
        if constexpr (std::is_same_v<T, Storage>)
          return 0.0;
        else
          return dev.emis_rate;
      },
      d);
}

bool is_dynamic_device(const Device& d) {
  return std::holds_alternative<Storage>(d) || std::holds_alternative<RampGenerator>(d);
}

Vec DemandSchedule::stacked() const {
  Vec out(values.size());
  const int n = nodes();
  for (int t = 0; t < periods(); ++t)
    for (int i = 0; i < n; ++i) out[t * n + i] = values(t, i);
  return out;
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v.where << ": " << v.what << "\n";
  return os.str();
}

ValidationReport validate_network(const Network& net) {
  ValidationReport rep;
  auto add = [&](std::string where, std::string what) {
    rep.violations.push_back({std::move(where), std::move(what)});
  };

  if (net.n_nodes < 1) add("n_nodes", "must be >= 1");
  if (net.horizon < 1) add("horizon", "T must be >= 1");
  if (!(net.period_hours > 0) || !std::isfinite(net.period_hours))
    add("period_hours", "must be positive and finite");
  if (net.slack_node >= net.n_nodes)
    add("slack", "slack node index out of range");

  const int m = net.n_lines();
  for (size_t l = 0; l < net.lines.size(); ++l) {
    const auto& ln = net.lines[l];
    const std::string where = "lines[" + std::to_string(l) + "]";
    if (ln.from == ln.to) add(where, "from_node must differ from to_node");
    if (ln.from < 0 || ln.from >= net.n_nodes || ln.to < 0 || ln.to >= net.n_nodes)
      add(where, "endpoint node index out of range");
    if (!(ln.susceptance > 0) || !std::isfinite(ln.susceptance))
      add(where, "susceptance must be > 0 and finite");
    if (!(ln.rating > 0)) add(where, "rating must be > 0");
  }

  if (net.ptdf.size() > 0) {
    if (net.ptdf.rows() != m)
      add("ptdf", "must have one row per line (" + std::to_string(m) + "), got " +
                      std::to_string(net.ptdf.rows()));
    if (net.ptdf.cols() != net.n_nodes)
      add("ptdf", "must have n_nodes columns");
    if (net.ptdf.cols() == net.n_nodes && net.n_nodes > 0) {
      const int slack = net.slack();
      if (slack >= 0 && slack < net.n_nodes &&
          net.ptdf.col(slack).cwiseAbs().maxCoeff() > 1e-9)
        add("ptdf", "column of the slack node must be all zeros");
    }
    if (!net.ptdf.allFinite()) add("ptdf", "entries must be finite");
  } else if (m > 0) {
    add("ptdf", "missing (compute from lines or provide explicitly)");
  }

  if (net.line_limits.size() != static_cast<Eigen::Index>(net.lines.size()) &&
      net.line_limits.size() != net.ptdf.rows())
    add("line_limits", "length must match the number of lines");
  for (Eigen::Index l = 0; l < net.line_limits.size(); ++l) {
    const double u = net.line_limits[l];
    // +inf is the documented "unlimited" sentinel; the row is dropped.
    if (std::isnan(u) || u <= 0)
      add("line_limits[" + std::to_string(l) + "]", "u_max must be strictly positive");
  }

  if (net.device_node.size() != net.devices.size())
    add("device_node_map", "length must match the number of devices");
  const int T = net.horizon;
  for (size_t j = 0; j < net.devices.size(); ++j) {
    const std::string where = "devices[" + std::to_string(j) + "]";
    if (j < net.device_node.size()) {
      const int node = net.device_node[j];
      if (node < 0 || node >= net.n_nodes)
        add(where, "node index " + std::to_string(node) + " outside [0, " +
                       std::to_string(net.n_nodes) + ")");
    }
    std::visit(
        [&](const auto& dev) {
          using Ty = std::decay_t<decltype(dev)>;
          if constexpr (std::is_same_v<Ty, Storage>) {
            if (!(dev.efficiency > 0) || dev.efficiency > 1.0)
              add(where, "storage efficiency must satisfy 0 < eta <= 1, got " +
                             std::to_string(dev.efficiency));
            if (!(dev.capacity > 0)) add(where, "storage capacity must be > 0");
            if (!(dev.power > 0)) add(where, "storage power must be > 0");
            if (dev.initial_soc < 0 || dev.initial_soc > dev.capacity)
              add(where, "initial_soc must lie in [0, capacity]");
            if (dev.terminal.kind == TerminalSoc::Kind::fixed &&
                (dev.terminal.value < 0 || dev.terminal.value > dev.capacity))
              add(where, "terminal soc must lie in [0, capacity]");
          } else {
            if (dev.g_min.size() != T || dev.g_max.size() != T)
              add(where, "g_min/g_max must have one entry per period");
            else {
              for (int t = 0; t < T; ++t) {
                if (dev.g_min[t] > dev.g_max[t]) {
                  add(where, "g_min > g_max at period " + std::to_string(t));
                  break;
                }
              }
              if (!finite_vec(dev.g_min)) add(where, "g_min entries must be finite");
            }
            if (dev.cost_quad < 0) add(where, "cost_quad must be >= 0");
            if (!std::isfinite(dev.cost_lin)) add(where, "cost_lin must be finite");
            if constexpr (std::is_same_v<Ty, RampGenerator>) {
              if (!(dev.ramp > 0)) add(where, "ramp must be > 0");
            }
            if constexpr (std::is_same_v<Ty, UCGenerator>) {
              if (!(dev.min_output_fraction > 0) || dev.min_output_fraction > 1.0)
                add(where, "min_output_fraction must satisfy 0 < f <= 1");
              if (dev.commitment &&
                  dev.commitment->size() != static_cast<size_t>(T))
                add(where, "commitment vector must have one entry per period");
            }
          }
        },
        net.devices[j]);
  }
  return rep;
}

Mat compute_ptdf(const std::vector<Line>& lines, int n_nodes, int slack) {
  if (n_nodes < 1) throw DataError("compute_ptdf: need at least one node");
  if (slack < 0 || slack >= n_nodes) throw DataError("compute_ptdf: slack out of range");
  const int m = static_cast<int>(lines.size());

  // Connectivity check first so failures name the isolated component.
  if (n_nodes > 1) {
    std::vector<std::vector<int>> adj(n_nodes);
    for (const auto& ln : lines) {
      adj[ln.from].push_back(ln.to);
      adj[ln.to].push_back(ln.from);
    }
    std::vector<char> seen(n_nodes, 0);
    std::queue<int> q;
    q.push(slack);
    seen[slack] = 1;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (!seen[v]) {
          seen[v] = 1;
          q.push(v);
        }
    }
    std::vector<int> isolated;
    for (int i = 0; i < n_nodes; ++i)
      if (!seen[i]) isolated.push_back(i);
    if (!isolated.empty()) {
      std::ostringstream os;
      os << "compute_ptdf: graph is disconnected; nodes {";
      for (size_t i = 0; i < isolated.size(); ++i) os << (i ? "," : "") << isolated[i];
      os << "} are not reachable from the slack node " << slack;
      throw DataError(os.str());
    }
  }

  Mat F = Mat::Zero(m, n_nodes);
  if (m == 0 || n_nodes == 1) return F;

  // Susceptance-weighted Laplacian with the slack row/column removed.
  const int nr = n_nodes - 1;
  auto reduced = [&](int i) { return i < slack ? i : i - 1; };
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(lines.size() * 4);
  for (const auto& ln : lines) {
    const double b = ln.susceptance;
    if (ln.from != slack && ln.to != slack) {
      trips.emplace_back(reduced(ln.from), reduced(ln.to), -b);
      trips.emplace_back(reduced(ln.to), reduced(ln.from), -b);
    }
    if (ln.from != slack) trips.emplace_back(reduced(ln.from), reduced(ln.from), b);
    if (ln.to != slack) trips.emplace_back(reduced(ln.to), reduced(ln.to), b);
  }
  Eigen::SparseMatrix<double> L(nr, nr);
  L.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> chol(L);
  if (chol.info() != Eigen::Success)
    throw DataError("compute_ptdf: reduced Laplacian factorization failed");

  // Angles for a unit injection at each non-slack node, then flows.
  Mat theta = Mat::Zero(n_nodes, n_nodes);  // theta(node, injection)
  for (int i = 0; i < n_nodes; ++i) {
    if (i == slack) continue;
    Vec e = Vec::Zero(nr);
    e[reduced(i)] = 1.0;
    Vec th = chol.solve(e);
    for (int v = 0; v < n_nodes; ++v)
      if (v != slack) theta(v, i) = th[reduced(v)];
  }
  for (int l = 0; l < m; ++l)
    for (int i = 0; i < n_nodes; ++i)
      F(l, i) = lines[l].susceptance * (theta(lines[l].from, i) - theta(lines[l].to, i));
  return F;
}

Network ensure_feasible_and_unique(const Network& net, const AugmentOptions& opts) {
  Network out = net;
  const int T = out.horizon;
  if (!out.augmented) {
    for (int i = 0; i < out.n_nodes; ++i) {
      StaticGenerator slack;
      slack.g_min = Vec::Zero(T);
      slack.g_max = Vec::Constant(T, std::numeric_limits<double>::infinity());
      slack.cost_quad = 0.0;
      slack.cost_lin = opts.voll;
      slack.emis_rate = 0.0;
      slack.name = "slack_node_" + std::to_string(i);
      slack.is_slack = true;
      out.devices.emplace_back(std::move(slack));
      out.device_node.push_back(i);
    }
    out.augmented = true;
  }
  for (auto& d : out.devices)
    std::visit(
        [&](auto& dev) {
          using Ty = std::decay_t<decltype(dev)>;
          if constexpr (!std::is_same_v<Ty, Storage>)
            dev.cost_quad = std::max(dev.cost_quad, opts.reg);
        },
        d);
  out.aux_reg = std::max(out.aux_reg, opts.reg);
  return out;
}

}  // namespace lme
