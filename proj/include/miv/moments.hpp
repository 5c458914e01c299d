#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miv/data.hpp"

namespace miv {

enum class RateLabel { sqrt_n, sqrt_nh };

// Stacked cell moments of R = (Y, T, YT) in canonical cell order; entry
// 3*cell + component.  a_n is the convergence rate the covariance is scaled
// for: sqrt(n) for frequency cells, sqrt(n h^d) for kernel-localized ones.
struct MomentVector {
    std::array<double, 12> m{};
    std::array<int64_t, kCells> counts{};
    int64_t n = 0;
    RateLabel rate = RateLabel::sqrt_n;
    double a_n = 0;
    double h = 0;  // bandwidth when rate == sqrt_nh
    int xdim = 0;

    double at(int cell, int comp) const { return m[static_cast<std::size_t>(3 * cell + comp)]; }
};

// Asymptotic covariance of a_n*(m_hat - m), block diagonal across cells
// (cells never share observations); 3x3 row-major blocks.
struct MomentCovariance {
    std::array<std::array<double, 9>, kCells> block{};
};

struct MomentEstimate {
    MomentVector m;
    MomentCovariance cov;
    std::vector<std::string> warnings;
};

// Cell means over rows, optionally restricted to rows whose first covariate
// equals x_code exactly (discrete covariate support).
MomentEstimate estimate_moments_discrete(const Dataset& d, std::optional<double> x_code = {});

enum class KernelKind { gaussian, epanechnikov };

struct KernelConfig {
    std::vector<double> x;  // query point, one coordinate per covariate column
    double h = 0;
    KernelKind kernel = KernelKind::gaussian;
};

// Nadaraya-Watson cell moments at X = x with a product kernel.  Weights are
// scaled so the weight at distance zero is exactly 1; uniform weights then
// reproduce estimate_moments_discrete bit for bit.
MomentEstimate estimate_moments_kernel(const Dataset& d, const KernelConfig& cfg);

// 1.06 * (geometric mean sd) * n^(-1/(4+d))
double bandwidth_rule_of_thumb(const Dataset& d);

// Plain-loop reference implementations (no chunking, no threads); kept for
// testing the production kernels and for the benchmark harness.
MomentEstimate estimate_moments_discrete_ref(const Dataset& d, std::optional<double> x_code = {});
MomentEstimate estimate_moments_kernel_ref(const Dataset& d, const KernelConfig& cfg);

}  // namespace miv
