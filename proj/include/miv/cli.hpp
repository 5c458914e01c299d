#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miv/tolerances.hpp"

namespace miv {

// Resolved run configuration; precedence is CLI flags over config-file
// values over these defaults.
struct RunConfig {
    std::string subcommand;
    std::string input;
    std::string output;          // empty: stdout
    std::string mode = "prop1";  // prop1 | prop2 | mixture
    std::string x = "none";      // none | discrete:<level> | kernel:<x1,x2,...>
    double bandwidth = 0;        // 0: rule of thumb
    std::string kernel = "gaussian";
    int ku = 1;
    std::vector<double> partition;  // outcome cut points; empty: quantile search
    std::uint64_t seed = 0;
    std::size_t n = 10000;
    int reps = 100;
    bool latent_dump = false;
    Tolerances tol;
};

// Subcommand bodies.  Each writes its report (JSON, except simulate which
// writes CSV) to config.output or stdout and returns the process exit code:
// 0 success, 1 input/schema failure, 2 mathematical/identification failure.
int cmd_identify(const RunConfig& rc);
int cmd_estimate(const RunConfig& rc);
int cmd_simulate(const RunConfig& rc);
int cmd_montecarlo(const RunConfig& rc);
int cmd_effects(const RunConfig& rc);

// Flag parsing, config-file merge, and dispatch.  The vector form takes
// argv verbatim, program name first.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace miv
