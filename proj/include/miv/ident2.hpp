#pragma once

#include <array>
#include <string>
#include <vector>

#include "miv/data.hpp"
#include "miv/dgp.hpp"
#include "miv/mat2.hpp"
#include "miv/moments.hpp"
#include "miv/tolerances.hpp"

namespace miv {

// Observable cell matrices Q(z,v) = [[1, E[Y|z,v]], [E[T|z,v], E[YT|z,v]]]
// in canonical cell order.
struct Q2Set {
    std::array<Mat2, kCells> q{};
};

Q2Set build_q(const MomentVector& m);
Q2Set build_q(const std::array<CellMoments, kCells>& cells);

struct Diagnostics {
    std::array<double, 2> eigenvalues{};  // cross-ratio spectrum, ascending
    double eig_gap = 0;                   // absolute spread of that spectrum
    double label_margin = 0;              // distance of the labeling rule from a tie
    double min_prob_margin = 0;           // closest recovered probability to {0,1}
    double max_cond = 0;                  // worst condition number among the cell matrices
    double recon_err = 0;                 // max relative factorization residual
    double cross_err = 0;                 // max shift of the latent treatment mass across v
    std::vector<std::string> warnings;
};

// Recovered factorization Q(z,v) = L_T(z) Lambda(z,v) L_Y(v)'.  Columns are
// labeled by the latent treatment: column 0 <-> T*=0.  lambda[cell] holds
// the diagonal of Lambda, i.e. (Pr(T*=0|z,v), Pr(T*=1|z,v)).
struct DecompositionSet {
    std::array<Mat2, 2> l_t{};  // by z: row 1 is Pr(T=1 | T*=j, z)
    std::array<Mat2, 2> l_y{};  // by v: row 1 is E[Y | T*=j, v]
    std::array<std::array<double, 2>, kCells> lambda{};
    std::array<double, 2> alpha{};  // outcome level by v
    std::array<double, 2> beta{};   // treatment effect by v
    Diagnostics diag;
};

// Full double-instrument identification: both Z and V shift the latent
// treatment, misclassification may depend on Z.  Labels T* by the second
// row of L_T(0) (monotone misclassification) and carries the labels to the
// companion factors by eigenvalue matching.
DecompositionSet identify_prop1(const Q2Set& q, const Tolerances& tol = {});

// Single-instrument variant: misclassification free of Z, so one L_T serves
// both arms and identification runs per covariate level.  The v=1 outcome
// factor is labeled by diagonalization fit because its spectrum is not
// comparable across covariate levels once the treatment mass shifts with V.
DecompositionSet identify_prop2(const Q2Set& q, const Tolerances& tol = {});

}  // namespace miv
