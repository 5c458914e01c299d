#pragma once

#include <array>

#include "miv/tolerances.hpp"

namespace miv {

// Dense 2x2, row-major [[a,b],[c,d]].  The two-type identification path only
// ever needs 2x2 algebra, so it carries its own closed-form kernels instead
// of a matrix library; the general K-state path uses Eigen.
struct Mat2 {
    double a = 0, b = 0, c = 0, d = 0;

    static Mat2 identity() { return {1, 0, 0, 1}; }
    static Mat2 diag(double x, double y) { return {x, 0, 0, y}; }

    double det() const { return a * d - b * c; }
    Mat2 t() const { return {a, c, b, d}; }
};

Mat2 operator*(const Mat2& l, const Mat2& r);
Mat2 operator-(const Mat2& l, const Mat2& r);

// raises SingularQ on an exactly singular matrix; near-singularity is the
// caller's job via cond2
Mat2 inv(const Mat2& m);

double max_abs(const Mat2& m);

// spectral condition number (closed-form SVD); +inf when singular
double cond2(const Mat2& m);

struct Eig2 {
    std::array<double, 2> values{};  // ascending
    Mat2 vectors;                    // columns follow values; first row scaled to (1, 1)
};

// eigenvalues only, ascending; raises ComplexEigenvalues past tol.disc.
// Lets callers run distinctness gates before eigenvector extraction, which
// would otherwise fail first on defective inputs.
std::array<double, 2> eig2vals(const Mat2& m, const Tolerances& tol = {});

// Real eigendecomposition with eigenvectors normalized to a unit first
// entry, matching the row-normalized factor matrices of the model.  Raises
// ComplexEigenvalues when the discriminant is negative beyond tol.disc and
// DegenerateEigenvector when an eigenvector cannot carry a unit first entry.
Eig2 eig2x2(const Mat2& m, const Tolerances& tol = {});

}  // namespace miv
