#include "miv/mat2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "miv/errors.hpp"

namespace miv {

Mat2 operator*(const Mat2& l, const Mat2& r) {
    return {l.a * r.a + l.b * r.c, l.a * r.b + l.b * r.d,
            l.c * r.a + l.d * r.c, l.c * r.b + l.d * r.d};
}

Mat2 operator-(const Mat2& l, const Mat2& r) {
    return {l.a - r.a, l.b - r.b, l.c - r.c, l.d - r.d};
}

Mat2 inv(const Mat2& m) {
    const double dt = m.det();
    if (dt == 0.0) raise(errc::singular_q, "2x2 matrix is exactly singular");
    const double s = 1.0 / dt;
    return {m.d * s, -m.b * s, -m.c * s, m.a * s};
}

double max_abs(const Mat2& m) {
    return std::max({std::fabs(m.a), std::fabs(m.b), std::fabs(m.c), std::fabs(m.d)});
}

double cond2(const Mat2& m) {
    // eigenvalues of M'M: (s1 +- sqrt(s1^2 - 4 det^2)) / 2; recover the small
    // one as det^2 / large to dodge cancellation
    const double s1 = m.a * m.a + m.b * m.b + m.c * m.c + m.d * m.d;
    const double dt = m.det();
    const double s2 = dt * dt;
    if (s2 == 0.0) return std::numeric_limits<double>::infinity();
    const double disc = std::sqrt(std::max(s1 * s1 - 4.0 * s2, 0.0));
    const double emax = 0.5 * (s1 + disc);
    const double emin = s2 / emax;
    return std::sqrt(emax / emin);
}

std::array<double, 2> eig2vals(const Mat2& m, const Tolerances& tol) {
    const double tr = m.a + m.d;
    const double dt = m.det();
    const double disc = tr * tr - 4.0 * dt;
    const double scale = std::max({1.0, tr * tr, 4.0 * std::fabs(dt)});
    if (disc < -tol.disc * scale)
        raise(errc::complex_eigenvalues,
              "discriminant " + std::to_string(disc) + " is negative; no real eigensystem");
    const double s = std::sqrt(std::max(disc, 0.0));
    return {0.5 * (tr - s), 0.5 * (tr + s)};
}

Eig2 eig2x2(const Mat2& m, const Tolerances& tol) {
    Eig2 e;
    e.values = eig2vals(m, tol);

    std::array<double, 2> row2{};
    for (int k = 0; k < 2; ++k) {
        const double lam = e.values[static_cast<std::size_t>(k)];
        // two candidate eigenvectors from the rows of (M - lam I); keep the
        // better-conditioned one
        const double u0 = m.b, u1 = lam - m.a;
        const double w0 = lam - m.d, w1 = m.c;
        const double nu = std::hypot(u0, u1), nw = std::hypot(w0, w1);
        const double x0 = nu >= nw ? u0 : w0;
        const double x1 = nu >= nw ? u1 : w1;
        const double nx = std::max(nu, nw);
        if (std::fabs(x0) <= tol.vec * nx)
            raise(errc::degenerate_eigenvector,
                  "eigenvector for eigenvalue " + std::to_string(lam) +
                      " has a vanishing first entry and cannot be row-normalized");
        row2[static_cast<std::size_t>(k)] = x1 / x0;
    }
    e.vectors = {1.0, 1.0, row2[0], row2[1]};
    return e;
}

}  // namespace miv
