#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "miv/dgp.hpp"
#include "miv/mde.hpp"
#include "miv/moments.hpp"

namespace miv {

// One replication is simulate -> cell moments -> minimum-distance fit.  The
// moment stage is the discrete one unless `kernel` is set, in which case the
// local stage runs at the given query point (h <= 0 picks the rule-of-thumb
// bandwidth from each replication's own sample).
struct MonteCarloConfig {
    std::size_t n = 10'000;
    int reps = 100;
    uint64_t seed = 0;
    FitOptions fit;
    std::optional<KernelConfig> kernel;
};

// Per-parameter aggregate over the successful replications.  sd, se_ratio
// and coverage need repetition: with a single replication (or a single
// success) they are NaN, and every statistic is NaN when nothing succeeded.
struct ComponentSummary {
    std::string name;
    double truth = 0;
    double mean = 0;
    double bias = 0;
    double sd = 0;
    double rmse = 0;
    double mean_se = 0;   // average reported standard error
    double se_ratio = 0;  // sd / mean_se, the SE calibration check
    double coverage = 0;  // share of 95% intervals containing the truth
};

struct MonteCarloSummary {
    std::size_t n = 0;  // echo of the configuration
    int reps = 0;
    uint64_t seed = 0;
    int n_success = 0;
    int n_fail = 0;
    int n_used_fallback = 0;              // successes that needed a restart
    std::map<std::string, int> failures;  // error name -> count
    Vec12 theta_true{};
    std::array<ComponentSummary, 12> comp{};
    double elapsed_sec = 0;  // wall time; not part of any stable output
};

// Names of the twelve parameter slots, in estimation order.
const std::array<std::string, 12>& theta_names();

// Pseudo-true parameter vector the replications are scored against: the
// population one, with the outcome levels moved to the kernel query point
// when the local stage is active.
Vec12 montecarlo_truth(const DgpSpec2& g, const MonteCarloConfig& cfg);

// Runs cfg.reps independent replications and aggregates bias, RMSE, mean
// reported SE, the SD/SE calibration ratio and 95% CI coverage for every
// parameter.  Replication r draws from RNG stream r of cfg.seed, and the
// aggregation walks replications in index order, so the summary is
// byte-identical no matter how many threads ran the loop.  A replication
// that throws is counted under its error name and excluded from the
// averages; the run itself never aborts on estimation failures.
MonteCarloSummary run_montecarlo(const DgpSpec2& g, const MonteCarloConfig& cfg);

}  // namespace miv
