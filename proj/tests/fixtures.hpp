#pragma once

#include <cmath>

#include "miv/dgp.hpp"
#include "miv/moments.hpp"

// Reference worlds used across the test suite.  Keep in sync with the JSON
// fixtures under data/: test_csv checks that the two stay identical.
namespace fixtures {

// well-separated binary world: strong instrument, asymmetric misclassification
inline miv::DgpSpec2 dgp_a() {
    miv::DgpSpec2 g;
    g.p_tstar = {0.2, 0.6, 0.4, 0.9};          // cells (z,v) = (0,0),(1,0),(0,1),(1,1)
    g.miscls = {{{0.1, 0.8}, {0.2, 0.9}}};     // [z][tstar]
    g.alpha = {1.0, 1.5};
    g.beta = {2.0, 1.0};
    g.sigma = 1.0;
    g.pr_z_given_v = {0.5, 0.5};
    g.pr_v1 = 0.5;
    return g;
}

// instrument-only variant: treatment probabilities and misclassification
// free of V and Z respectively
inline miv::DgpSpec2 dgp_b() {
    miv::DgpSpec2 g = dgp_a();
    g.p_tstar = {0.3, 0.7, 0.3, 0.7};
    g.miscls = {{{0.1, 0.8}, {0.1, 0.8}}};
    return g;
}

// z-free misclassification but covariate-shifted treatment mass: the
// overlap regime where both identification routes apply
inline miv::DgpSpec2 dgp_c() {
    miv::DgpSpec2 g = dgp_a();
    g.miscls = {{{0.1, 0.8}, {0.1, 0.8}}};
    return g;
}

// dgp_a with a uniform covariate entering the outcome level
inline miv::DgpSpec2 dgp_a_x() {
    miv::DgpSpec2 g = dgp_a();
    g.with_x = true;
    g.alpha_x = 1.0;
    return g;
}

// violates mean exogeneity: eps shifts with the latent treatment
inline miv::DgpSpec2 dgp_a_offsets() {
    miv::DgpSpec2 g = dgp_a();
    g.eps_offset = {{{0.0, 0.0}, {0.3, 0.2}}};  // [tstar][v]
    return g;
}

// two-group mixture world, all identification margins >= 0.05
inline miv::DgpSpecK dgp_m() {
    miv::DgpSpecK g;
    g.k_u = 2;
    g.lam = {
        0.42, 0.12, 0.28, 0.18,   // cell (0,0)
        0.18, 0.39, 0.13, 0.30,   // cell (1,0)
        0.28, 0.20, 0.40, 0.12,   // cell (0,1)
        0.10, 0.34, 0.22, 0.34,   // cell (1,1)
    };
    const int K = 4;
    for (int z = 0; z < 2; ++z) {
        const double diag = z ? 0.64 : 0.70;
        const double off = (1.0 - diag) / (K - 1);
        g.emit[z].assign(K * K, off);
        for (int s = 0; s < K; ++s) g.emit[z][s * K + s] = diag;
    }
    g.alpha = {0.0, 0.5, 4.0, 4.5};   // alpha[u*2+v]
    g.beta = {2.0, 1.5, 2.5, 3.0};    // beta[u*2+v]
    g.sigma = 0.8;
    g.pr_z_given_v = {0.5, 0.5};
    g.pr_v1 = 0.5;
    return g;
}

// population moments packaged as a n-observation estimate: exact means with
// the asymptotic covariance, for noise-free estimation tests
inline miv::MomentEstimate oracle_estimate(const miv::DgpSpec2& g, double n = 1e6) {
    miv::MomentEstimate e;
    const auto mm = miv::oracle_moments(g);
    const auto vv = miv::oracle_moment_cov(g);
    const auto pr = miv::oracle_cell_pr(g);
    for (int j = 0; j < miv::kCells; ++j) {
        e.m.m[3 * j + 0] = mm[j].ey;
        e.m.m[3 * j + 1] = mm[j].et;
        e.m.m[3 * j + 2] = mm[j].eyt;
        e.m.counts[j] = static_cast<int64_t>(std::llround(n * pr[j]));
        for (int k = 0; k < 9; ++k) e.cov.block[j][k] = vv[j][k] / pr[j];
    }
    e.m.n = static_cast<int64_t>(n);
    e.m.a_n = std::sqrt(n);
    e.m.rate = miv::RateLabel::sqrt_n;
    return e;
}

}  // namespace fixtures
