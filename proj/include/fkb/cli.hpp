#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fkb/sim.hpp"

namespace fkb::cli {

enum ExitCode : int { kOk = 0, kValidationError = 1, kRuntimeError = 2 };

/// Runs `fkb <subcommand> ...`. `args` excludes the program name. Logs and
/// help go to `log`; data goes to files only.
int parse_and_dispatch(const std::vector<std::string>& args, std::ostream& log);

/// Reads observational data for `analyze` and `kernel-dump`.
LabeledSample load_external(const std::string& path, const std::string& treatment_col,
                            const std::string& outcome_col);

}  // namespace fkb::cli
