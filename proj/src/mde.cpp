#include "miv/mde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "miv/errors.hpp"
#include "miv/rng.hpp"

namespace miv {

namespace {

using M12 = Eigen::Matrix<double, 12, 12, Eigen::RowMajor>;
using V12 = Eigen::Matrix<double, 12, 1>;

Eigen::Map<const M12> as_mat(const Mat12& m) { return Eigen::Map<const M12>(m.data()); }
Eigen::Map<const V12> as_vec(const Vec12& v) { return Eigen::Map<const V12>(v.data()); }

// slot helpers for the phi layout
constexpr int y_slot(int tstar, int v) { return 2 * v + tstar; }
constexpr int p_slot(int cell) { return 4 + cell; }
constexpr int t_slot(int tstar, int z) { return 8 + 2 * z + tstar; }

}  // namespace

Vec12 f_map(const Vec12& phi) {
    Vec12 m{};
    for (int j = 0; j < kCells; ++j) {
        const int z = cell_z(j), v = cell_v(j);
        const double p = phi[p_slot(j)];
        const double y0 = phi[y_slot(0, v)], y1 = phi[y_slot(1, v)];
        const double t0 = phi[t_slot(0, z)], t1 = phi[t_slot(1, z)];
        m[3 * j + 0] = y0 * (1.0 - p) + y1 * p;
        m[3 * j + 1] = t0 * (1.0 - p) + t1 * p;
        m[3 * j + 2] = y0 * t0 * (1.0 - p) + y1 * t1 * p;
    }
    return m;
}

Mat12 jacobian_f(const Vec12& phi) {
    Mat12 f{};
    auto at = [&f](int r, int c) -> double& { return f[12 * r + c]; };
    for (int j = 0; j < kCells; ++j) {
        const int z = cell_z(j), v = cell_v(j);
        const double p = phi[p_slot(j)];
        const double y0 = phi[y_slot(0, v)], y1 = phi[y_slot(1, v)];
        const double t0 = phi[t_slot(0, z)], t1 = phi[t_slot(1, z)];
        const int r = 3 * j;
        at(r, y_slot(0, v)) = 1.0 - p;
        at(r, y_slot(1, v)) = p;
        at(r, p_slot(j)) = y1 - y0;
        at(r + 1, t_slot(0, z)) = 1.0 - p;
        at(r + 1, t_slot(1, z)) = p;
        at(r + 1, p_slot(j)) = t1 - t0;
        at(r + 2, y_slot(0, v)) = t0 * (1.0 - p);
        at(r + 2, y_slot(1, v)) = t1 * p;
        at(r + 2, t_slot(0, z)) = y0 * (1.0 - p);
        at(r + 2, t_slot(1, z)) = y1 * p;
        at(r + 2, p_slot(j)) = y1 * t1 - y0 * t0;
    }
    return f;
}

Vec12 g_map(const Vec12& phi, const Vec12& m) {
    Vec12 th = phi;
    for (int v = 0; v < 2; ++v) {
        const double p0 = phi[p_slot(cell_index(0, v))];
        const double p1 = phi[p_slot(cell_index(1, v))];
        const double y0 = m[3 * cell_index(0, v)];
        const double y1 = m[3 * cell_index(1, v)];
        const double gap = p1 - p0;
        if (gap == 0.0)
            raise(errc::singular_iv_matrix,
                  "instrument does not move the latent treatment at v=" + std::to_string(v));
        th[2 * v + 0] = (p1 * y0 - p0 * y1) / gap;  // alpha(v)
        th[2 * v + 1] = (y1 - y0) / gap;            // beta(v)
    }
    return th;
}

void jacobian_g(const Vec12& phi, const Vec12& m, Mat12& g_phi, Mat12& g_m) {
    g_phi.fill(0.0);
    g_m.fill(0.0);
    // pass-through rows
    for (int i = 4; i < 12; ++i) g_phi[12 * i + i] = 1.0;
    for (int v = 0; v < 2; ++v) {
        const int c0 = cell_index(0, v), c1 = cell_index(1, v);
        const double p0 = phi[p_slot(c0)], p1 = phi[p_slot(c1)];
        const double y0 = m[3 * c0], y1 = m[3 * c1];
        const double gap = p1 - p0, g2 = gap * gap;
        const int ra = 2 * v, rb = 2 * v + 1;
        g_phi[12 * ra + p_slot(c0)] = p1 * (y0 - y1) / g2;
        g_phi[12 * ra + p_slot(c1)] = p0 * (y1 - y0) / g2;
        g_m[12 * ra + 3 * c0] = p1 / gap;
        g_m[12 * ra + 3 * c1] = -p0 / gap;
        g_phi[12 * rb + p_slot(c0)] = (y1 - y0) / g2;
        g_phi[12 * rb + p_slot(c1)] = -(y1 - y0) / g2;
        g_m[12 * rb + 3 * c0] = -1.0 / gap;
        g_m[12 * rb + 3 * c1] = 1.0 / gap;
    }
}

Mat12 assemble_omega(const MomentCovariance& cov) {
    Mat12 o{};
    for (int j = 0; j < kCells; ++j)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) o[12 * (3 * j + r) + (3 * j + c)] = cov.block[j][3 * r + c];
    return o;
}

namespace {

// internal coordinates: outcome slots free, probability slots on the logit
// scale so the optimizer cannot leave the simplex
double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec12 to_internal(const Vec12& phi) {
    Vec12 x = phi;
    for (int i = 4; i < 12; ++i) x[i] = logit(std::clamp(phi[i], 1e-6, 1.0 - 1e-6));
    return x;
}

Vec12 to_phi(const Vec12& x) {
    Vec12 phi = x;
    // clamp away the expit saturation so reported probabilities stay
    // strictly interior even when a logit runs off
    for (int i = 4; i < 12; ++i) phi[i] = std::clamp(expit(x[i]), 1e-12, 1.0 - 1e-12);
    return phi;
}

double objective_at(const Vec12& x, const Vec12& mhat, Vec12& resid) {
    const Vec12 m = f_map(to_phi(x));
    double s = 0.0;
    for (int i = 0; i < 12; ++i) {
        resid[i] = mhat[i] - m[i];
        s += resid[i] * resid[i];
    }
    return s;
}

struct LmOutcome {
    Vec12 x{};
    double obj = 0;
    int iters = 0;
    bool converged = false;
};

// damped Gauss-Newton on r(x) = mhat - f(phi(x)); Marquardt scaling on the
// normal equations
LmOutcome lm_minimize(Vec12 x, const Vec12& mhat, const FitOptions& opt) {
    LmOutcome out;
    Vec12 resid{};
    double obj = objective_at(x, mhat, resid);
    double lm = opt.lm0;

    int it = 0;
    bool converged = false;
    while (it < opt.max_iter && !converged) {
        ++it;
        const Vec12 phi = to_phi(x);
        const Mat12 fj = jacobian_f(phi);
        // J = -F * d phi / d x; logit slots carry sigma'(eta) = p (1-p)
        M12 jac = -as_mat(fj);
        for (int c = 4; c < 12; ++c) jac.col(c) *= phi[c] * (1.0 - phi[c]);

        const M12 jtj = jac.transpose() * jac;
        const V12 jtr = jac.transpose() * as_vec(resid);

        bool stepped = false;
        while (!stepped) {
            M12 lhs = jtj;
            for (int i = 0; i < 12; ++i)
                lhs(i, i) += lm * std::max(jtj(i, i), 1e-12);
            const V12 delta = lhs.ldlt().solve(-jtr);

            Vec12 xn = x;
            for (int i = 0; i < 12; ++i) xn[i] += delta(i);
            Vec12 rn{};
            const double on = objective_at(xn, mhat, rn);
            if (on <= obj) {
                const double drop = obj - on;
                x = xn;
                resid = rn;
                obj = on;
                lm = std::max(lm * 0.1, 1e-15);
                stepped = true;
                if (delta.lpNorm<Eigen::Infinity>() < opt.step_tol || drop < opt.obj_tol)
                    converged = true;
            } else {
                lm *= 10.0;
                if (lm > 1e15) {  // cannot improve in any direction
                    converged = true;
                    stepped = true;
                }
            }
        }
    }
    out.x = x;
    out.obj = obj;
    out.iters = it;
    out.converged = converged;
    return out;
}

// plug-in start from the eigendecomposition route
Vec12 init_from_identification(const MomentVector& m, const Tolerances& tol, Diagnostics& diag) {
    const DecompositionSet s = identify_prop1(build_q(m), tol);
    diag = s.diag;
    Vec12 phi{};
    for (int v = 0; v < 2; ++v) {
        phi[y_slot(0, v)] = s.l_y[v].c;
        phi[y_slot(1, v)] = s.l_y[v].d;
    }
    for (int j = 0; j < kCells; ++j) phi[p_slot(j)] = s.lambda[j][1];
    for (int z = 0; z < 2; ++z) {
        phi[t_slot(0, z)] = s.l_t[z].c;
        phi[t_slot(1, z)] = s.l_t[z].d;
    }
    return phi;
}

// f is invariant under globally swapping the latent treatment labels
// (p -> 1-p with the outcome and measurement pairs exchanged), so every
// interpolant has a mirror twin.  The estimand fixes the branch where T is
// positively informative about T* in both instrument arms.
bool labeling_ok(const Vec12& phi) {
    return phi[t_slot(1, 0)] > phi[t_slot(0, 0)] && phi[t_slot(1, 1)] > phi[t_slot(0, 1)];
}

Vec12 relabel(const Vec12& phi) {
    Vec12 out = phi;
    for (int v = 0; v < 2; ++v) std::swap(out[y_slot(0, v)], out[y_slot(1, v)]);
    for (int j = 0; j < kCells; ++j) out[p_slot(j)] = 1.0 - out[p_slot(j)];
    for (int z = 0; z < 2; ++z) std::swap(out[t_slot(0, z)], out[t_slot(1, z)]);
    return out;
}

// move a converged fit that landed on the mirrored branch back to the
// canonical one; re-polishing from the swapped point keeps the outcome
// bookkeeping honest
void normalize_labeling(LmOutcome& best, const Vec12& mhat, const FitOptions& opt) {
    if (!best.converged || labeling_ok(to_phi(best.x))) return;
    LmOutcome sw = lm_minimize(to_internal(relabel(to_phi(best.x))), mhat, opt);
    if (sw.converged && labeling_ok(to_phi(sw.x))) {
        sw.iters += best.iters;
        best = sw;
    }
}

// deterministic random start k: outcome slots span the observed outcome
// range, probability slots the open simplex
Vec12 fallback_start(const Vec12& mhat, uint64_t seed, uint64_t k) {
    double ylo = mhat[0], yhi = mhat[0];
    for (int j = 1; j < kCells; ++j) {
        ylo = std::min(ylo, mhat[3 * j]);
        yhi = std::max(yhi, mhat[3 * j]);
    }
    const double pad = std::max(1.0, yhi - ylo);
    const CounterRng rng(seed, 0);
    Vec12 phi{};
    for (int i = 0; i < 4; ++i) phi[i] = (ylo - pad) + (yhi - ylo + 2 * pad) * rng.uniform(k, i);
    for (int i = 4; i < 12; ++i) phi[i] = 0.05 + 0.9 * rng.uniform(k, i);
    return phi;
}

}  // namespace

FitResult fit_minimum_distance(const MomentEstimate& moments, const FitOptions& opt) {
    const Vec12& mhat = moments.m.m;
    for (int i = 0; i < 12; ++i)
        if (!std::isfinite(mhat[i])) raise(errc::non_finite_input, "moment vector has non-finite entries");

    FitResult res;
    res.a_n = moments.m.a_n;

    // start from the closed-form decomposition; when that route is not
    // available on these moments, fall back to deterministic random restarts
    LmOutcome best;
    bool plugin_ok = true;
    Vec12 phi0{};
    try {
        phi0 = init_from_identification(moments.m, opt.tol, res.ident_diag);
    } catch (const error& e) {
        res.init_error = e.what();
        plugin_ok = false;
    }
    if (plugin_ok) {
        best = lm_minimize(to_internal(phi0), mhat, opt);
        if (!best.converged)
            raise(errc::no_convergence, "minimum-distance fit exhausted " +
                                            std::to_string(opt.max_iter) + " iterations");
        normalize_labeling(best, mhat, opt);
    } else {
        res.used_fallback = true;
        bool have = false, best_ok = false;
        for (int k = 0; k < opt.n_fallback; ++k) {
            LmOutcome cand =
                lm_minimize(to_internal(fallback_start(mhat, opt.fallback_seed, k)), mhat, opt);
            if (!cand.converged) continue;
            normalize_labeling(cand, mhat, opt);
            const bool ok = labeling_ok(to_phi(cand.x));
            // canonical-branch interpolants beat mirrored ones outright;
            // inside a branch the smaller objective wins
            if (!have || (ok && !best_ok) || (ok == best_ok && cand.obj < best.obj)) {
                best = cand;
                best_ok = ok;
                have = true;
            }
        }
        if (!have)
            raise(errc::initialization_failed,
                  "no start converged (" + std::to_string(opt.n_fallback) +
                      " fallback restarts); plug-in failure: " + res.init_error);
    }

    res.phi = to_phi(best.x);
    res.objective = best.obj;
    res.iterations = best.iters;
    for (int v = 0; v < 2; ++v) {
        const double gap = res.phi[p_slot(cell_index(1, v))] - res.phi[p_slot(cell_index(0, v))];
        if (std::fabs(gap) <= opt.tol.rel_gap)
            raise(errc::singular_iv_matrix,
                  "fitted treatment mass does not respond to the instrument at v=" +
                      std::to_string(v));
    }
    res.theta = g_map(res.phi, mhat);

    // delta method.  Exactly identified system: dphi/dm = F^{-1}.
    const Mat12 fj = jacobian_f(res.phi);
    const M12 f = as_mat(fj);
    Eigen::JacobiSVD<M12> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double smin = svd.singularValues()(11), smax = svd.singularValues()(0);
    if (!(smin > 0.0) || smax / smin > 1e10)
        raise(errc::singular_f, "moment-map Jacobian is numerically singular at the optimum "
                                "(condition " +
                                    std::to_string(smax / std::max(smin, 1e-300)) + ")");
    const M12 finv = svd.solve(M12::Identity());

    const Mat12 om = assemble_omega(moments.cov);
    const M12 omega = as_mat(om);
    const M12 cov_phi = finv * omega * finv.transpose();

    Mat12 gp{}, gm{};
    jacobian_g(res.phi, mhat, gp, gm);
    const M12 b = as_mat(gp) * finv + as_mat(gm);
    const M12 cov_theta = b * omega * b.transpose();

    Eigen::Map<M12>(res.cov_phi.data()) = cov_phi;
    Eigen::Map<M12>(res.cov_theta.data()) = cov_theta;
    for (int i = 0; i < 12; ++i) {
        res.se_phi[i] = std::sqrt(std::max(cov_phi(i, i), 0.0)) / res.a_n;
        res.se_theta[i] = std::sqrt(std::max(cov_theta(i, i), 0.0)) / res.a_n;
    }
    return res;
}

}  // namespace miv
