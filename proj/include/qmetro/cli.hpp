#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qmetro/config.hpp"

namespace qmetro {

struct BoundRow {
  double resource = 0.0;
  double bound = 0.0;
  std::string task;
  std::string case_name;
  std::string regime;
};

// Reference curves for the configured model on the given grid (the task default when empty).
std::vector<BoundRow> compute_bounds(const RunConfig& config, std::span<const double> grid);
void write_bounds_header(std::ostream& out);
void write_bounds_rows(std::ostream& out, std::span<const BoundRow> rows);

// "1,2,5", "1:30" (unit steps) or "0.1:1.5:0.1".
std::vector<double> parse_grid(const std::string& text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, const CsvTable& table);

// Joins eval or bounds CSVs on the resource column; other columns are prefixed with the run label.
CsvTable compare_runs(std::span<const std::filesystem::path> inputs);

// Verbosity from QMETRO_LOG (trace, debug, info, warn, error, off); info when unset.
void configure_logging(const std::filesystem::path& log_file = {});

int run_cli(int argc, const char* const* argv);

}  // namespace qmetro
