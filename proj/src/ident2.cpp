#include "miv/ident2.hpp"

#include <algorithm>
#include <cmath>

#include "miv/errors.hpp"

namespace miv {

namespace {

std::string cell_name(int j) {
    return "Q(z=" + std::to_string(cell_z(j)) + ",v=" + std::to_string(cell_v(j)) + ")";
}

double check_cells(const Q2Set& q, const Tolerances& tol) {
    double worst = 0.0;
    for (int j = 0; j < kCells; ++j) {
        const Mat2& m = q.q[static_cast<std::size_t>(j)];
        if (!std::isfinite(m.a) || !std::isfinite(m.b) || !std::isfinite(m.c) || !std::isfinite(m.d))
            raise(errc::non_finite_input, cell_name(j) + " has non-finite entries");
        const double cnd = cond2(m);
        if (!(cnd <= tol.max_cond))
            raise(errc::singular_q, cell_name(j) + " is numerically singular (cond " +
                                        std::to_string(cnd) + " > " + std::to_string(tol.max_cond) + ")");
        worst = std::max(worst, cnd);
    }
    return worst;
}

void check_gap(const std::array<double, 2>& vals, const Tolerances& tol, const std::string& what) {
    const double scale = std::max({1.0, std::fabs(vals[0]), std::fabs(vals[1])});
    if (std::fabs(vals[1] - vals[0]) <= tol.eig_gap * scale)
        raise(errc::eigenvalues_not_distinct,
              what + " has coinciding eigenvalues (" + std::to_string(vals[0]) + ", " +
                  std::to_string(vals[1]) + "); the instrument does not move the latent treatment");
}

// gate distinctness on the eigenvalues alone, then take the eigenvectors
Eig2 eig_gated(const Mat2& m, const Tolerances& tol, const std::string& what) {
    check_gap(eig2vals(m, tol), tol, what);
    return eig2x2(m, tol);
}

struct Labeled {
    Mat2 l;                        // columns ordered T*=0, T*=1
    std::array<double, 2> vals{};  // eigenvalues in label order
};

// order the eigenvector columns by their second-row entry: under monotone
// misclassification Pr(T=1|T*=1,z) exceeds Pr(T=1|T*=0,z)
Labeled label_by_second_row(const Eig2& e, const Tolerances& tol, double& margin,
                            const std::string& what) {
    margin = std::fabs(e.vectors.d - e.vectors.c);
    if (margin <= tol.label)
        raise(errc::labeling_ambiguous, what + ": the misclassification rates of the two latent " +
                                            "types are indistinguishable (margin " +
                                            std::to_string(margin) + ")");
    Labeled out;
    const bool keep = e.vectors.c < e.vectors.d;
    out.l = keep ? e.vectors : Mat2{1.0, 1.0, e.vectors.d, e.vectors.c};
    out.vals = keep ? e.values : std::array<double, 2>{e.values[1], e.values[0]};
    return out;
}

// carry existing labels to a companion factor whose spectrum must match
// `target` up to column order
Mat2 match_by_eigenvalue(const Eig2& e, const std::array<double, 2>& target, const Tolerances& tol,
                         const std::string& what) {
    const double keep = std::fabs(e.values[0] - target[0]) + std::fabs(e.values[1] - target[1]);
    const double swap = std::fabs(e.values[0] - target[1]) + std::fabs(e.values[1] - target[0]);
    const double scale = std::max({1.0, std::fabs(target[0]), std::fabs(target[1])});
    if (std::fabs(keep - swap) <= tol.label * scale)
        raise(errc::labeling_ambiguous,
              what + ": eigenvalue matching cannot separate the latent types");
    if (keep <= swap) return e.vectors;
    return {1.0, 1.0, e.vectors.d, e.vectors.c};
}

// diagonal of L_T^{-1} Q L_Y^{-T} plus the relative off-diagonal leakage
std::array<double, 2> extract_lambda(const Mat2& lt, const Mat2& ly, const Mat2& q, double& offdiag) {
    const Mat2 m = inv(lt) * q * inv(ly.t());
    const double scale = std::max(1.0, max_abs(m));
    offdiag = std::max(std::fabs(m.b), std::fabs(m.c)) / scale;
    return {m.a, m.d};
}

// max |L_T diag(lambda) L_Y' - Q| over the cell, relative to the cell scale
double recon_error(const Mat2& lt, const Mat2& ly, const std::array<double, 2>& lam, const Mat2& q) {
    const Mat2 r = lt * Mat2::diag(lam[0], lam[1]) * ly.t() - q;
    return max_abs(r) / std::max(1.0, max_abs(q));
}

// audit one recovered probability: hard failure beyond tol.prob, clamp the
// rounding fuzz inside, track the distance to the {0,1} boundary
double audit_prob(double& p, double margin_so_far, const Tolerances& tol, const std::string& what) {
    if (p < -tol.prob || p > 1.0 + tol.prob)
        raise(errc::invalid_probability,
              what + " = " + std::to_string(p) + " is outside [0,1] beyond tolerance");
    const double margin = std::min(p, 1.0 - p);
    p = std::clamp(p, 0.0, 1.0);
    return std::min(margin_so_far, margin);
}

void audit_decomposition(DecompositionSet& s, const Tolerances& tol) {
    double margin = 1.0;
    for (int z = 0; z < 2; ++z) {
        Mat2& l = s.l_t[static_cast<std::size_t>(z)];
        margin = audit_prob(l.c, margin, tol, "Pr(T=1|T*=0,z=" + std::to_string(z) + ")");
        margin = audit_prob(l.d, margin, tol, "Pr(T=1|T*=1,z=" + std::to_string(z) + ")");
    }
    for (int j = 0; j < kCells; ++j) {
        auto& lam = s.lambda[static_cast<std::size_t>(j)];
        for (int k = 0; k < 2; ++k)
            margin = audit_prob(lam[static_cast<std::size_t>(k)], margin, tol,
                                "Pr(T*=" + std::to_string(k) + "|" + cell_name(j) + ")");
    }
    s.diag.min_prob_margin = margin;
}

// two-point solve of E[Y|z,v] = alpha(v) + beta(v) Pr(T*=1|z,v) across the
// instrument arms
void solve_alpha_beta(DecompositionSet& s, const Q2Set& q, const Tolerances& tol) {
    for (int v = 0; v < 2; ++v) {
        const double p0 = s.lambda[static_cast<std::size_t>(cell_index(0, v))][1];
        const double p1 = s.lambda[static_cast<std::size_t>(cell_index(1, v))][1];
        const double y0 = q.q[static_cast<std::size_t>(cell_index(0, v))].b;
        const double y1 = q.q[static_cast<std::size_t>(cell_index(1, v))].b;
        const double gap = p1 - p0;
        if (std::fabs(gap) <= tol.rel_gap)
            raise(errc::singular_iv_matrix,
                  "instrument does not move the latent treatment at v=" + std::to_string(v) +
                      " (Pr gap " + std::to_string(gap) + ")");
        s.beta[static_cast<std::size_t>(v)] = (y1 - y0) / gap;
        s.alpha[static_cast<std::size_t>(v)] = (p1 * y0 - p0 * y1) / gap;
    }
}

}  // namespace

Q2Set build_q(const MomentVector& m) {
    Q2Set s;
    for (int j = 0; j < kCells; ++j)
        s.q[static_cast<std::size_t>(j)] = {1.0, m.at(j, 0), m.at(j, 1), m.at(j, 2)};
    return s;
}

Q2Set build_q(const std::array<CellMoments, kCells>& cells) {
    Q2Set s;
    for (int j = 0; j < kCells; ++j) {
        const CellMoments& c = cells[static_cast<std::size_t>(j)];
        s.q[static_cast<std::size_t>(j)] = {1.0, c.ey, c.et, c.eyt};
    }
    return s;
}

DecompositionSet identify_prop1(const Q2Set& q, const Tolerances& tol) {
    DecompositionSet s;
    s.diag.max_cond = check_cells(q, tol);
    const Mat2 &q00 = q.q[0], &q10 = q.q[1], &q01 = q.q[2], &q11 = q.q[3];

    // cross-ratio similarity Q00 Q10^-1 Q11 Q01^-1 = L_T(0) diag(lam~) L_T(0)^-1
    const Eig2 et = eig_gated(q00 * inv(q10) * q11 * inv(q01), tol, "the cross-instrument ratio");
    s.diag.eigenvalues = et.values;
    s.diag.eig_gap = et.values[1] - et.values[0];

    const Labeled t0 = label_by_second_row(et, tol, s.diag.label_margin, "L_T(0)");
    s.l_t[0] = t0.l;

    // companion factors share the labeled spectrum (inverted for the z=1 arm)
    s.l_y[0] = match_by_eigenvalue(eig2x2(q00.t() * inv(q01.t()) * q11.t() * inv(q10.t()), tol),
                                   t0.vals, tol, "L_Y(0)");
    s.l_t[1] = match_by_eigenvalue(eig2x2(q10 * inv(q00) * q01 * inv(q11), tol),
                                   {1.0 / t0.vals[0], 1.0 / t0.vals[1]}, tol, "L_T(1)");
    s.l_y[1] = match_by_eigenvalue(eig2x2(q11.t() * inv(q10.t()) * q00.t() * inv(q01.t()), tol),
                                   t0.vals, tol, "L_Y(1)");

    double recon = 0.0, off = 0.0;
    for (int j = 0; j < kCells; ++j) {
        const Mat2& lt = s.l_t[static_cast<std::size_t>(cell_z(j))];
        const Mat2& ly = s.l_y[static_cast<std::size_t>(cell_v(j))];
        s.lambda[static_cast<std::size_t>(j)] =
            extract_lambda(lt, ly, q.q[static_cast<std::size_t>(j)], off);
        recon = std::max({recon, off,
                          recon_error(lt, ly, s.lambda[static_cast<std::size_t>(j)],
                                      q.q[static_cast<std::size_t>(j)])});
    }
    s.diag.recon_err = recon;

    audit_decomposition(s, tol);
    solve_alpha_beta(s, q, tol);
    return s;
}

DecompositionSet identify_prop2(const Q2Set& q, const Tolerances& tol) {
    DecompositionSet s;
    s.diag.max_cond = check_cells(q, tol);
    const Mat2 &q00 = q.q[0], &q10 = q.q[1], &q01 = q.q[2], &q11 = q.q[3];

    // single-arm similarity Q00 Q10^-1 = L_T diag(ratio) L_T^-1
    const Eig2 et = eig_gated(q00 * inv(q10), tol, "the instrument ratio at v=0");
    s.diag.eigenvalues = et.values;
    s.diag.eig_gap = et.values[1] - et.values[0];

    const Labeled t = label_by_second_row(et, tol, s.diag.label_margin, "L_T");
    s.l_t[0] = t.l;
    s.l_t[1] = t.l;  // misclassification free of z in this regime

    s.l_y[0] = match_by_eigenvalue(eig2x2(q00.t() * inv(q10.t()), tol), t.vals, tol, "L_Y(0)");

    double recon = 0.0, off = 0.0;
    for (int z = 0; z < 2; ++z) {
        const int j = cell_index(z, 0);
        s.lambda[static_cast<std::size_t>(j)] =
            extract_lambda(t.l, s.l_y[0], q.q[static_cast<std::size_t>(j)], off);
        recon = std::max({recon, off,
                          recon_error(t.l, s.l_y[0], s.lambda[static_cast<std::size_t>(j)],
                                      q.q[static_cast<std::size_t>(j)])});
    }

    // the v=1 outcome factor has its own spectrum once the treatment mass
    // moves with V, so label it by which column order diagonalizes the cell
    const Eig2 ey1 = eig_gated(q01.t() * inv(q11.t()), tol, "the instrument ratio at v=1");
    double diagfit[2];
    const Mat2 cand[2] = {ey1.vectors, {1.0, 1.0, ey1.vectors.d, ey1.vectors.c}};
    for (int k = 0; k < 2; ++k) {
        double o = 0.0;
        extract_lambda(t.l, cand[k], q01, o);
        diagfit[k] = o;
    }
    if (std::fabs(diagfit[0] - diagfit[1]) <= tol.label)
        raise(errc::labeling_ambiguous, "L_Y(1): neither column order diagonalizes the v=1 cell");
    s.l_y[1] = diagfit[0] < diagfit[1] ? cand[0] : cand[1];
    s.diag.label_margin = std::min(s.diag.label_margin, std::fabs(diagfit[0] - diagfit[1]));

    for (int z = 0; z < 2; ++z) {
        const int j = cell_index(z, 1);
        s.lambda[static_cast<std::size_t>(j)] =
            extract_lambda(t.l, s.l_y[1], q.q[static_cast<std::size_t>(j)], off);
        recon = std::max({recon, off,
                          recon_error(t.l, s.l_y[1], s.lambda[static_cast<std::size_t>(j)],
                                      q.q[static_cast<std::size_t>(j)])});
    }
    s.diag.recon_err = recon;

    double cross = 0.0;
    for (int z = 0; z < 2; ++z)
        for (int k = 0; k < 2; ++k)
            cross = std::max(cross, std::fabs(s.lambda[static_cast<std::size_t>(cell_index(z, 1))][static_cast<std::size_t>(k)] -
                                              s.lambda[static_cast<std::size_t>(cell_index(z, 0))][static_cast<std::size_t>(k)]));
    s.diag.cross_err = cross;

    audit_decomposition(s, tol);
    solve_alpha_beta(s, q, tol);
    return s;
}

}  // namespace miv
