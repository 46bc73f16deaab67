#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fkb::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, header excluded
};

/// Plain comma-separated reader: header row required, no quoting, blank
/// lines skipped, trailing CR stripped. Throws DataError on ragged rows.
Table read(std::istream& in);
Table read_file(const std::string& path);

/// Shortest round-trip formatting: "%.17g".
std::string format(double value);

/// Row-major dump, no header.
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
void write_matrix_file(const std::string& path, const Eigen::MatrixXd& m);

}  // namespace fkb::csv
