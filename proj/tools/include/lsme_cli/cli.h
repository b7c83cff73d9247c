#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lsme::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitDataIntegrity = 3,
  kExitInfeasible = 4,
  kExitConfiguration = 5,
};

// Noise profile scaled by --noise: (alpha_inst, alpha_view, beta) per unit.
inline constexpr double kNoiseAlphaInst = 1.5;
inline constexpr double kNoiseAlphaView = 1.5;
inline constexpr double kNoiseBeta = 8.0;

// Runs `lsme <args...>` (args excludes the program name) and returns the
// process exit code. Reports go to `out`, diagnostics to `err`.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lsme::cli
