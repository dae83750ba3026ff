#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "priorstack/numerics.hpp"

namespace priorstack::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kNumericalError = 4 };

/// Numeric CSV: comma separated, mandatory header row. With `labelled`, the
/// first column holds row names (e.g. feature names in a prior file).
struct CsvTable {
  std::vector<std::string> header;  ///< value columns only
  std::vector<std::string> labels;  ///< row names when labelled
  Matrix values;
};

/// `source` names the input in error messages. Throws DataError with the
/// line and column of the first bad cell.
CsvTable parse_csv(std::istream& in, const std::string& source, bool labelled = false);
CsvTable read_csv(const std::string& path, bool labelled = false);

/// Entry point behind the executable; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace priorstack::cli
