// Network JSON and demand CSV ingestion, CSV/JSON emission.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lme/grid.hpp"

namespace lme {

/// Parse the network JSON schema (see README). If `ptdf` is absent it is
/// computed from the lines with the file's slack node. Throws DataError with
/// the offending key on malformed input.
Network load_network(const std::filesystem::path& file);
Network parse_network_json(const std::string& text, const std::string& origin = "<string>");

/// Demand CSV: header row node_0,...,node_{n-1}, one data row per period (MW).
DemandSchedule load_demand_csv(const std::filesystem::path& file, int n_nodes);
DemandSchedule parse_demand_csv(std::istream& is, int n_nodes, const std::string& origin);

/// Full-precision (%.17g) matrix CSV with the given column headers.
void write_matrix_csv(const std::filesystem::path& file, const Mat& m,
                      const std::vector<std::string>& headers);
std::string matrix_csv_string(const Mat& m, const std::vector<std::string>& headers);

std::string format_double(double v);  // %.17g

}  // namespace lme
