#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "miv/ident2.hpp"
#include "miv/moments.hpp"
#include "miv/tolerances.hpp"

namespace miv {

using Vec12 = std::array<double, 12>;
using Mat12 = std::array<double, 144>;  // row-major 12x12

// Structural parameter vector phi:
//   [0..3]  E[Y | T*=0, v=0], E[Y | T*=1, v=0], E[Y | T*=0, v=1], E[Y | T*=1, v=1]
//   [4..7]  Pr(T*=1 | w_j) in canonical cell order
//   [8..11] E[T | T*=0, z=0], E[T | T*=1, z=0], E[T | T*=0, z=1], E[T | T*=1, z=1]
// theta swaps the four outcome means for (alpha(0), beta(0), alpha(1), beta(1)).
inline constexpr int kPhiDim = 12;

// model-implied cell moments m(phi), canonical stacking (3*cell + component)
Vec12 f_map(const Vec12& phi);

// reparameterization to reported effects; the outcome levels come from the
// observed moment vector m, the treatment mass from phi
Vec12 g_map(const Vec12& phi, const Vec12& m);

Mat12 jacobian_f(const Vec12& phi);
void jacobian_g(const Vec12& phi, const Vec12& m, Mat12& g_phi, Mat12& g_m);

// 12x12 block-diagonal covariance of the stacked moment vector
Mat12 assemble_omega(const MomentCovariance& cov);

struct FitOptions {
    Tolerances tol;
    int max_iter = 500;
    double lm0 = 1e-3;        // initial Levenberg damping
    double step_tol = 1e-12;  // sup-norm step size declaring convergence
    double obj_tol = 1e-16;   // objective improvement declaring convergence
    int n_fallback = 20;      // random restarts when the plug-in start fails
    uint64_t fallback_seed = 1234;
};

struct FitResult {
    Vec12 phi{}, theta{};
    Vec12 se_phi{}, se_theta{};
    Mat12 cov_phi{}, cov_theta{};  // covariance of a_n*(est - truth)
    double a_n = 0;
    double objective = 0;
    int iterations = 0;
    bool used_fallback = false;
    std::string init_error;  // why the plug-in start was abandoned, if it was
    Diagnostics ident_diag;  // diagnostics of the plug-in start when available
};

// Minimum-distance fit of phi to the cell moments, then the delta method
// for both parameterizations.  The system is exactly identified, so the fit
// interpolates the moments and dphi/dm = F^{-1} at the optimum.
FitResult fit_minimum_distance(const MomentEstimate& moments, const FitOptions& opt = {});

}  // namespace miv
