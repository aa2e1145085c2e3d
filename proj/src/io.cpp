#include "lme/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "lme/errors.hpp"

namespace lme {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw DataError(origin + ": " + msg);
}

// Scalar -> broadcast to T; array -> length-checked vector. "inf"/"+inf"
// accepted for unbounded upper limits.
Vec per_period(const json& v, int T, const std::string& origin, const std::string& key) {
  auto scalar = [&](const json& x) -> double {
    if (x.is_number()) return x.get<double>();
    if (x.is_string()) {
      const std::string s = x.get<std::string>();
      if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    }
    fail(origin, key + ": expected number or \"inf\"");
  };
  if (v.is_array()) {
    if (static_cast<int>(v.size()) != T)
      fail(origin, key + ": expected " + std::to_string(T) + " entries, got " +
                       std::to_string(v.size()));
    Vec out(T);
    for (int t = 0; t < T; ++t) out[t] = scalar(v[t]);
    return out;
  }
  return Vec::Constant(T, scalar(v));
}

double require_number(const json& j, const char* key, const std::string& origin) {
  if (!j.contains(key)) fail(origin, std::string("missing key '") + key + "'");
  if (!j[key].is_number()) fail(origin, std::string("'") + key + "' must be a number");
  return j[key].get<double>();
}

Device parse_device(const json& dj, int T, const std::string& origin, size_t idx) {
  const std::string where = origin + ": devices[" + std::to_string(idx) + "]";
  if (!dj.contains("type")) fail(where, "missing 'type'");
  const std::string type = dj["type"].get<std::string>();
  const std::string name =
      dj.value("name", std::string("device_") + std::to_string(idx));

  auto bounds = [&](const char* key, double fallback) {
    return dj.contains(key) ? per_period(dj[key], T, where, key)
                            : Vec::Constant(T, fallback);
  };

  if (type == "static_generator" || type == "ramp_generator" || type == "uc_generator") {
    Vec g_min = bounds("g_min", 0.0);
    if (!dj.contains("g_max")) fail(where, "missing 'g_max'");
    Vec g_max = per_period(dj["g_max"], T, where, "g_max");
    const double a = dj.value("cost_quad", 0.0);
    const double b = dj.value("cost_lin", 0.0);
    const double c = dj.value("emis_rate", 0.0);
    if (type == "static_generator") {
      StaticGenerator g{g_min, g_max, a, b, c, name, false};
      return g;
    }
    if (type == "ramp_generator") {
      RampGenerator g;
      g.g_min = g_min;
      g.g_max = g_max;
      g.cost_quad = a;
      g.cost_lin = b;
      g.emis_rate = c;
      g.ramp = require_number(dj, "ramp", where);
      g.name = name;
      return g;
    }
    UCGenerator g;
    g.g_min = g_min;
    g.g_max = g_max;
    g.cost_quad = a;
    g.cost_lin = b;
    g.emis_rate = c;
    g.min_output_fraction = dj.value("min_output_fraction", 0.4);
    if (dj.contains("commitment")) {
      if (!dj["commitment"].is_array() || static_cast<int>(dj["commitment"].size()) != T)
        fail(where, "'commitment' must be a 0/1 array of length T");
      std::vector<int> on;
      for (const auto& e : dj["commitment"]) on.push_back(e.get<int>() ? 1 : 0);
      g.commitment = std::move(on);
    }
    g.name = name;
    return g;
  }
  if (type == "storage") {
    Storage s;
    s.capacity = require_number(dj, "capacity", where);
    s.power = require_number(dj, "power", where);
    s.efficiency = dj.value("efficiency", 1.0);
    s.initial_soc = dj.value("initial_soc", 0.0);
    if (dj.contains("terminal_soc_policy")) {
      const auto& p = dj["terminal_soc_policy"];
      if (p.is_string()) {
        const std::string ps = p.get<std::string>();
        if (ps == "free")
          s.terminal = TerminalSoc::free_();
        else if (ps == "equal_to_initial")
          s.terminal = TerminalSoc::equal_to_initial_();
        else
          fail(where, "terminal_soc_policy: unknown policy '" + ps + "'");
      } else if (p.is_number()) {
        s.terminal = TerminalSoc::fixed_(p.get<double>());
      } else if (p.is_object() && p.contains("fixed")) {
        s.terminal = TerminalSoc::fixed_(p["fixed"].get<double>());
      } else {
        fail(where, "terminal_soc_policy: expected \"free\", \"equal_to_initial\", "
                    "a number, or {\"fixed\": value}");
      }
    }
    s.name = name;
    return s;
  }
  fail(where, "unknown device type '" + type + "'");
}

}  // namespace

Network parse_network_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(origin, std::string("JSON parse error: ") + e.what());
  }

  Network net;
  net.n_nodes = static_cast<int>(require_number(j, "n_nodes", origin));
  net.horizon = j.contains("horizon") ? static_cast<int>(j["horizon"].get<double>()) : 1;
  net.period_hours = j.value("period_hours", 1.0);
  if (j.contains("slack")) net.slack_node = j["slack"].get<int>();

  if (j.contains("lines")) {
    for (const auto& lj : j["lines"]) {
      Line ln;
      ln.from = lj.at("from").get<int>();
      ln.to = lj.at("to").get<int>();
      ln.susceptance = lj.value("susceptance", 1.0);
      ln.rating = lj.contains("rating") && lj["rating"].is_string()
                      ? std::numeric_limits<double>::infinity()
                      : lj.value("rating", std::numeric_limits<double>::infinity());
      net.lines.push_back(ln);
    }
  }

  const int m = static_cast<int>(net.lines.size());
  if (j.contains("line_limits")) {
    const auto& ll = j["line_limits"];
    net.line_limits = per_period(ll, static_cast<int>(ll.size()), origin, "line_limits");
  } else {
    net.line_limits = Vec(m);
    for (int l = 0; l < m; ++l) net.line_limits[l] = net.lines[l].rating;
  }

  if (j.contains("ptdf")) {
    const auto& pj = j["ptdf"];
    if (!pj.is_array() || pj.empty()) fail(origin, "'ptdf' must be a non-empty 2d array");
    const int rows = static_cast<int>(pj.size());
    const int cols = static_cast<int>(pj[0].size());
    net.ptdf = Mat(rows, cols);
    for (int r = 0; r < rows; ++r) {
      if (static_cast<int>(pj[r].size()) != cols) fail(origin, "'ptdf' rows differ in length");
      for (int c = 0; c < cols; ++c) net.ptdf(r, c) = pj[r][c].get<double>();
    }
  } else if (m > 0) {
    net.ptdf = compute_ptdf(net.lines, net.n_nodes, net.slack());
  } else {
    net.ptdf = Mat::Zero(0, net.n_nodes);
  }

  if (j.contains("devices")) {
    size_t idx = 0;
    for (const auto& dj : j["devices"]) {
      net.devices.push_back(parse_device(dj, net.horizon, origin, idx));
      if (!dj.contains("node")) fail(origin, "devices[" + std::to_string(idx) + "]: missing 'node'");
      net.device_node.push_back(dj["node"].get<int>());
      ++idx;
    }
  }
  return net;
}

Network load_network(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open network file: " + file.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_network_json(buf.str(), file.string());
}

DemandSchedule parse_demand_csv(std::istream& is, int n_nodes, const std::string& origin) {
  std::string line;
  if (!std::getline(is, line)) fail(origin, "empty demand CSV");
  // Header must be node_0,...,node_{n-1}.
  {
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      // Trim whitespace and a possible trailing \r.
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      const std::string want = "node_" + std::to_string(col);
      if (cell != want)
        fail(origin, "header column " + std::to_string(col) + " is '" + cell +
                         "', expected '" + want + "'");
      ++col;
    }
    if (col != n_nodes)
      fail(origin, "header has " + std::to_string(col) + " columns, expected " +
                       std::to_string(n_nodes));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(origin, "row " + std::to_string(rows.size() + 1) + ": bad number '" + cell + "'");
      }
    }
    if (static_cast<int>(row.size()) != n_nodes)
      fail(origin, "row " + std::to_string(rows.size() + 1) + " has " +
                       std::to_string(row.size()) + " columns, expected " +
                       std::to_string(n_nodes));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(origin, "no demand rows");
  DemandSchedule D;
  D.values = Mat(static_cast<int>(rows.size()), n_nodes);
  for (size_t t = 0; t < rows.size(); ++t)
    for (int i = 0; i < n_nodes; ++i) D.values(static_cast<int>(t), i) = rows[t][i];
  return D;
}

DemandSchedule load_demand_csv(const std::filesystem::path& file, int n_nodes) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open demand file: " + file.string());
  return parse_demand_csv(is, n_nodes, file.string());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string matrix_csv_string(const Mat& m, const std::vector<std::string>& headers) {
  std::ostringstream os;
  for (size_t c = 0; c < headers.size(); ++c) os << (c ? "," : "") << headers[c];
  os << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      os << (c ? "," : "") << format_double(m(r, c));
    os << "\n";
  }
  return os.str();
}

void write_matrix_csv(const std::filesystem::path& file, const Mat& m,
                      const std::vector<std::string>& headers) {
  if (static_cast<Eigen::Index>(headers.size()) != m.cols())
    throw DataError("write_matrix_csv: header count != columns");
  std::ofstream os(file, std::ios::binary);
  if (!os) throw DataError("cannot write " + file.string());
  os << matrix_csv_string(m, headers);
}

}  // namespace lme
