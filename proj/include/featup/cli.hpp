#pragma once

#include <iosfwd>

namespace featup {

/// Exit codes: 0 success, 2 usage, 3 file or format problem, 4 invalid value,
/// 5 numeric failure, 1 anything else. Failures print one line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace featup
