// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: gen-data, train, eval, gradcheck, preset.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace normalign {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInputError = 2,
  kExitNumericalAbort = 3,
  kExitContractViolation = 4,
};

/// `args` excludes the program name. Machine-readable results go to `out`,
/// logs and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace normalign
