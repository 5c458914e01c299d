#include <doctest.h>

#include <cmath>
#include <map>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fixtures.hpp"
#include "miv/errors.hpp"

using namespace miv;

namespace {

const AssumptionCheck& find_check(const std::vector<AssumptionCheck>& cs, const std::string& id) {
    for (const auto& c : cs)
        if (c.id == id) return c;
    REQUIRE(false);
    return cs.front();
}

}  // namespace

TEST_CASE("population moments of the reference binary world, by hand") {
    auto m = oracle_moments(fixtures::dgp_a());
    // cell (0,0): p=0.2, miscls (0.1, 0.8), alpha=1, beta=2
    CHECK(m[0].et == doctest::Approx(0.24).epsilon(1e-13));
    CHECK(m[0].ey == doctest::Approx(1.4).epsilon(1e-13));
    CHECK(m[0].eyt == doctest::Approx(0.56).epsilon(1e-13));
    // cell (1,0)
    CHECK(m[1].et == doctest::Approx(0.62).epsilon(1e-13));
    CHECK(m[1].ey == doctest::Approx(2.2).epsilon(1e-13));
    CHECK(m[1].eyt == doctest::Approx(1.70).epsilon(1e-13));
    // cell (0,1)
    CHECK(m[2].et == doctest::Approx(0.38).epsilon(1e-13));
    CHECK(m[2].ey == doctest::Approx(1.9).epsilon(1e-13));
    CHECK(m[2].eyt == doctest::Approx(0.89).epsilon(1e-13));
    // cell (1,1): E[YT] = 1.5*0.2*0.1 + 2.5*0.9*0.9
    CHECK(m[3].et == doctest::Approx(0.83).epsilon(1e-13));
    CHECK(m[3].ey == doctest::Approx(2.4).epsilon(1e-13));
    CHECK(m[3].eyt == doctest::Approx(2.055).epsilon(1e-13));
}

TEST_CASE("population covariance of (Y,T,YT), cell (0,0)") {
    auto cov = oracle_moment_cov(fixtures::dgp_a());
    const auto& c = cov[0];
    CHECK(c[0] == doctest::Approx(1.64).epsilon(1e-13));    // Var Y
    CHECK(c[4] == doctest::Approx(0.1824).epsilon(1e-13));  // Var T
    CHECK(c[8] == doctest::Approx(1.4464).epsilon(1e-13));  // Var YT
    CHECK(c[1] == doctest::Approx(0.224).epsilon(1e-13));   // Cov(Y,T)
    CHECK(c[2] == doctest::Approx(0.976).epsilon(1e-13));   // Cov(Y,YT)
    CHECK(c[5] == doctest::Approx(0.4256).epsilon(1e-13));  // Cov(T,YT)
    CHECK(c[1] == c[3]);
    CHECK(c[2] == c[6]);
    CHECK(c[5] == c[7]);
}

TEST_CASE("canonical coordinate vectors") {
    auto g = fixtures::dgp_a();
    auto phi = oracle_phi(g);
    const double want_phi[12] = {1, 3, 1.5, 2.5, 0.2, 0.6, 0.4, 0.9, 0.1, 0.8, 0.2, 0.9};
    for (int i = 0; i < 12; ++i) CHECK(phi[i] == doctest::Approx(want_phi[i]).epsilon(1e-14));
    auto th = oracle_theta(g);
    const double want_th[12] = {1, 2, 1.5, 1, 0.2, 0.6, 0.4, 0.9, 0.1, 0.8, 0.2, 0.9};
    for (int i = 0; i < 12; ++i) CHECK(th[i] == doctest::Approx(want_th[i]).epsilon(1e-14));
}

TEST_CASE("covariate world shifts only the outcome level") {
    auto g = fixtures::dgp_a_x();
    auto base = oracle_moments(fixtures::dgp_a());
    auto at = oracle_moments_at_x(g, 0.5);
    for (int j = 0; j < kCells; ++j) {
        CHECK(at[j].ey == doctest::Approx(base[j].ey + 0.5).epsilon(1e-13));
        CHECK(at[j].et == doctest::Approx(base[j].et).epsilon(1e-14));
        CHECK(at[j].eyt == doctest::Approx(base[j].eyt + 0.5 * base[j].et).epsilon(1e-13));
    }
    // spot value from the construction: E[Y | x=0.5, z=0, v=0] = 1.5 + 2*0.2
    CHECK(at[0].ey == doctest::Approx(1.9).epsilon(1e-13));
}

TEST_CASE("sampled moments agree with the enumeration oracle") {
    auto g = fixtures::dgp_a();
    const std::size_t n = 1000000;
    auto d = simulate(g, n, 20240601, 0);
    auto want = oracle_moments(g);
    auto cov = oracle_moment_cov(g);
    auto cpr = oracle_cell_pr(g);

    double sums[16] = {0};
    std::size_t cnt[4] = {0};
    for (std::size_t i = 0; i < n; ++i) {
        int j = cell_index(d.z[i], d.v[i]);
        ++cnt[j];
        sums[j * 4 + 0] += d.y[i];
        sums[j * 4 + 1] += d.t[i];
        sums[j * 4 + 2] += d.y[i] * d.t[i];
    }
    for (int j = 0; j < kCells; ++j) {
        double nj = double(cnt[j]);
        CHECK(nj / double(n) == doctest::Approx(cpr[j]).epsilon(0.02));
        double se_y = std::sqrt(cov[j][0] / nj);
        double se_t = std::sqrt(cov[j][4] / nj);
        double se_yt = std::sqrt(cov[j][8] / nj);
        CHECK(std::abs(sums[j * 4 + 0] / nj - want[j].ey) < 5 * se_y);
        CHECK(std::abs(sums[j * 4 + 1] / nj - want[j].et) < 5 * se_t);
        CHECK(std::abs(sums[j * 4 + 2] / nj - want[j].eyt) < 5 * se_yt);
    }

    // latent side channel matches the latent treatment frequencies
    double p11 = 0;
    std::size_t n11 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d.z[i] == 1 && d.v[i] == 1) {
            ++n11;
            p11 += d.latent_tstar[i];
        }
    CHECK(p11 / double(n11) == doctest::Approx(0.9).epsilon(0.01));
}

TEST_CASE("simulation is deterministic and thread-count invariant") {
    auto g = fixtures::dgp_a();
    auto a = simulate(g, 50000, 7, 3);
#ifdef _OPENMP
    int save = omp_get_max_threads();
    omp_set_num_threads(3);
#endif
    auto b = simulate(g, 50000, 7, 3);
#ifdef _OPENMP
    omp_set_num_threads(save);
#endif
    CHECK(a.y == b.y);
    CHECK(a.t == b.t);
    CHECK(a.z == b.z);
    CHECK(a.v == b.v);
    CHECK(a.latent_tstar == b.latent_tstar);

    auto c = simulate(g, 50000, 7, 4);  // different stream
    CHECK(a.y != c.y);
}

TEST_CASE("degenerate sizes") {
    auto g = fixtures::dgp_a();
    auto d = simulate(g, 1, 1, 0);
    CHECK(d.size() == 1);
    auto e = simulate(g, 0, 1, 0);
    CHECK(e.size() == 0);
}

TEST_CASE("spec validation rejects broken tables") {
    auto g = fixtures::dgp_a();
    g.p_tstar[2] = 1.0;
    CHECK_THROWS_AS(validate(g), error);
    auto gk = fixtures::dgp_m();
    gk.lam[0] += 0.2;
    CHECK_THROWS_AS(validate(gk), error);
}

TEST_CASE("assumption audit on the reference worlds") {
    auto checks = verify_assumptions(fixtures::dgp_a());
    CHECK(find_check(checks, "relevance_z").holds);
    CHECK(find_check(checks, "relevance_z").margin == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(find_check(checks, "relevance_v").margin == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(find_check(checks, "miscls_order").margin == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(find_check(checks, "cross_ratio_distinct").holds);
    CHECK(find_check(checks, "cross_ratio_distinct").margin ==
          doctest::Approx(5.0 / 12.0).epsilon(1e-10));
    CHECK(find_check(checks, "mean_exogeneity").holds);
    CHECK_FALSE(find_check(checks, "z_only_regime").holds);

    auto checks_b = verify_assumptions(fixtures::dgp_b());
    CHECK(find_check(checks_b, "z_only_regime").holds);
    CHECK_FALSE(find_check(checks_b, "relevance_v").holds);

    auto checks_off = verify_assumptions(fixtures::dgp_a_offsets());
    CHECK_FALSE(find_check(checks_off, "mean_exogeneity").holds);
    CHECK(find_check(checks_off, "nonzero_effect").holds);

    // z-constant latent treatment kills instrument relevance
    auto flat = fixtures::dgp_a();
    flat.p_tstar = {0.3, 0.3, 0.5, 0.5};
    CHECK_FALSE(find_check(verify_assumptions(flat), "relevance_z").holds);
}

TEST_CASE("mixture world passes every margin at 0.05") {
    auto g = fixtures::dgp_m();
    auto cuts = oracle_partition(g, g.k());
    auto checks = verify_assumptions(g, cuts);
    for (const auto& c : checks) {
        INFO(c.id, " margin ", c.margin);
        CHECK(c.holds);
        if (c.id != "partition_separates") CHECK(c.margin >= 0.05);
    }
    CHECK(find_check(checks, "cross_ratio_distinct").margin ==
          doctest::Approx(121.0 / 390).epsilon(1e-9));
    CHECK(find_check(checks, "emission_dominance").margin == doctest::Approx(0.52).epsilon(1e-12));
}

TEST_CASE("population quantile cuts invert the mixture cdf") {
    auto g = fixtures::dgp_m();
    auto cuts = oracle_partition(g, 4);
    REQUIRE(cuts.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(oracle_y_cdf(g, cuts[i]) == doctest::Approx((i + 1) / 4.0).epsilon(1e-10));
        if (i) CHECK(cuts[i] > cuts[i - 1]);
    }
}

TEST_CASE("mixture tables are coherent probability tables") {
    auto g = fixtures::dgp_m();
    auto cuts = oracle_partition(g, 4);
    auto tabs = oracle_mixture_tables(g, cuts);
    const int K = g.k(), D = 4;
    for (int j = 0; j < kCells; ++j) {
        const auto& tb = tabs[j];
        double sy = 0;
        for (double p : tb.pr_y) sy += p;
        CHECK(sy == doctest::Approx(1.0).epsilon(1e-12));
        double ss = 0;
        for (double p : tb.pr_s) ss += p;
        CHECK(ss == doctest::Approx(1.0).epsilon(1e-12));
        for (int i = 0; i < K; ++i) {
            double row = 0;
            for (int djj = 0; djj < D; ++djj) row += tb.joint[i * D + djj];
            CHECK(row == doctest::Approx(tb.pr_s[i]).epsilon(1e-12));
        }
        // total y-mass equals E[Y | cell]
        double ey = 0;
        for (double m : tb.ymom) ey += m;
        double want = 0;
        for (int s = 0; s < K; ++s)
            want += oracle_pr_sstar(g, j, s) * oracle_mean_y_sstar(g, s, cell_v(j));
        CHECK(ey == doctest::Approx(want).epsilon(1e-11));
    }
}

TEST_CASE("closed-form effects match the frozen hand computation") {
    auto e = oracle_effects(fixtures::dgp_m());
    CHECK(e.ate[0] == doctest::Approx(2.2225).epsilon(1e-12));
    CHECK(e.tt[0] == doctest::Approx(1.11 / 0.495).epsilon(1e-12));
    CHECK(e.tut[0] == doctest::Approx(1.1125 / 0.505).epsilon(1e-12));
    CHECK(e.late[0] == doctest::Approx(0.72 / 0.39).epsilon(1e-12));
    CHECK(e.ate[1] == doctest::Approx(2.31).epsilon(1e-12));
    CHECK(e.tt[1] == doctest::Approx(1.095 / 0.50).epsilon(1e-12));
    CHECK(e.tut[1] == doctest::Approx(1.215 / 0.50).epsilon(1e-12));
    CHECK(e.late[1] == doctest::Approx(1.03 / 0.36).epsilon(1e-12));
    // aggregation identity
    CHECK(e.ate[0] == doctest::Approx(e.tt[0] * 0.495 + e.tut[0] * 0.505).epsilon(1e-12));
}

TEST_CASE("potential-outcome simulation agrees with the closed form") {
    auto g = fixtures::dgp_m();
    auto truth = oracle_effects(g);
    auto sim = po_oracle_sim(g, 2000000, 99);
    for (int v = 0; v < 2; ++v) {
        CHECK(std::abs(sim.ate[v] - truth.ate[v]) < 4 * sim.se_ate[v] + 1e-9);
        CHECK(std::abs(sim.tt[v] - truth.tt[v]) < 4 * sim.se_tt[v] + 1e-9);
        CHECK(std::abs(sim.tut[v] - truth.tut[v]) < 4 * sim.se_tut[v] + 1e-9);
    }
}

TEST_CASE("mixture sampler matches its population tables") {
    auto g = fixtures::dgp_m();
    const std::size_t n = 400000;
    auto d = simulate(g, n, 5150, 0);
    REQUIRE(d.has_u());
    auto cuts = oracle_partition(g, 4);
    auto tabs = oracle_mixture_tables(g, cuts);
    const int K = g.k();

    std::size_t cnt[4] = {0};
    std::map<std::pair<int, int>, std::size_t> joint;  // (cell, state) -> count
    for (std::size_t i = 0; i < n; ++i) {
        int j = cell_index(d.z[i], d.v[i]);
        ++cnt[j];
        ++joint[{j, d.u[i] * 2 + d.t[i]}];
    }
    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < K; ++s) {
            double p = tabs[j].pr_s[s];
            double freq = double(joint[{j, s}]) / double(cnt[j]);
            double se = std::sqrt(p * (1 - p) / double(cnt[j]));
            CHECK(std::abs(freq - p) < 5 * se);
        }
}
