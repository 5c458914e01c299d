#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "fixtures.hpp"
#include "miv/data.hpp"
#include "miv/dgp.hpp"
#include "miv/errors.hpp"
#include "miv/ident2.hpp"
#include "miv/identk.hpp"
#include "miv/moments.hpp"
#include "miv/rng.hpp"

using namespace miv;

namespace {

double ncdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mean_y(const DgpSpecK& g, int s, int v) {
    const int u = s >> 1, t = s & 1;
    return g.alpha[static_cast<std::size_t>(u * 2 + v)] +
           g.beta[static_cast<std::size_t>(u * 2 + v)] * t;
}

// Pr(Y in interval j | S*=s, v) for the normal outcome model, computed
// directly from the error function as an independent cross-check
double interval_pr(const Partition& part, int j, double m, double sigma) {
    const double a = j == 0 ? 0.0 : ncdf((part.cuts[static_cast<std::size_t>(j - 1)] - m) / sigma);
    const double b =
        j == part.cells() - 1 ? 1.0 : ncdf((part.cuts[static_cast<std::size_t>(j)] - m) / sigma);
    return b - a;
}

// cross-ratio spectrum lam(0,0)lam(1,1) / (lam(1,0)lam(0,1)) in state order
std::vector<double> tilde_spectrum(const DgpSpecK& g) {
    const int K = g.k();
    std::vector<double> e(static_cast<std::size_t>(K));
    for (int s = 0; s < K; ++s)
        e[static_cast<std::size_t>(s)] =
            g.lam[static_cast<std::size_t>(0 * K + s)] * g.lam[static_cast<std::size_t>(3 * K + s)] /
            (g.lam[static_cast<std::size_t>(1 * K + s)] * g.lam[static_cast<std::size_t>(2 * K + s)]);
    return e;
}

// the binary benchmark world expressed in mixture form (K_u = 1)
DgpSpecK dgp_a_mixture() {
    const DgpSpec2 b = fixtures::dgp_a();
    DgpSpecK g;
    g.k_u = 1;
    g.lam.resize(8);
    for (int j = 0; j < kCells; ++j) {
        g.lam[static_cast<std::size_t>(j * 2)] = 1.0 - b.p_tstar[static_cast<std::size_t>(j)];
        g.lam[static_cast<std::size_t>(j * 2 + 1)] = b.p_tstar[static_cast<std::size_t>(j)];
    }
    for (int z = 0; z < 2; ++z) {
        const auto& m = b.miscls[static_cast<std::size_t>(z)];
        g.emit[static_cast<std::size_t>(z)] = {1.0 - m[0], 1.0 - m[1], m[0], m[1]};
    }
    g.alpha = {b.alpha[0], b.alpha[1]};
    g.beta = {b.beta[0], b.beta[1]};
    g.sigma = b.sigma;
    g.pr_z_given_v = b.pr_z_given_v;
    g.pr_v1 = b.pr_v1;
    return g;
}

// mixture benchmark with column-wise asymmetric emissions, so that state
// relabeling is visible in every factor
DgpSpecK dgp_m_asym() {
    DgpSpecK g = fixtures::dgp_m();
    g.emit[0] = {0.70, 0.09, 0.08, 0.11,   //
                 0.12, 0.71, 0.10, 0.09,   //
                 0.10, 0.11, 0.72, 0.07,   //
                 0.08, 0.09, 0.10, 0.73};
    g.emit[1] = {0.64, 0.11, 0.10, 0.15,   //
                 0.14, 0.65, 0.12, 0.09,   //
                 0.12, 0.13, 0.66, 0.09,   //
                 0.10, 0.11, 0.12, 0.67};
    return g;
}

}  // namespace

TEST_CASE("quantile partition reproduces the four-point example and handles edge cases") {
    const Partition p = build_partition({1.0, 2.0, 3.0, 4.0}, 4);
    REQUIRE(p.cuts.size() == 3);
    CHECK(p.cuts[0] == doctest::Approx(1.75).epsilon(1e-14));
    CHECK(p.cuts[1] == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(p.cuts[2] == doctest::Approx(3.25).epsilon(1e-14));
    CHECK(p.cells() == 4);

    // intervals are right-closed
    CHECK(p.interval(1.0) == 0);
    CHECK(p.interval(1.75) == 0);
    CHECK(p.interval(std::nextafter(1.75, 2.0)) == 1);
    CHECK(p.interval(2.5) == 1);
    CHECK(p.interval(100.0) == 3);
    CHECK(p.interval(-100.0) == 0);

    // shuffled input gives the same cuts
    const Partition q = build_partition({4.0, 1.0, 3.0, 2.0}, 4);
    CHECK(q.cuts == p.cuts);

    CHECK_THROWS_AS(build_partition({2.0, 2.0, 2.0, 2.0, 2.0}, 4), error);
    try {
        build_partition({2.0, 2.0, 2.0}, 2);
    } catch (const error& e) {
        CHECK(e.code() == errc::too_few_distinct_values);
    }
    CHECK_THROWS_AS(build_partition({1.0, 2.0, 3.0}, 1), error);
    CHECK_THROWS_AS(build_partition({1.0, std::nan(""), 3.0}, 2), error);
    CHECK_THROWS_AS(build_partition_levels({1.0, 2.0, 3.0}, {0.5, 0.4}), error);
    CHECK_THROWS_AS(build_partition_levels({1.0, 2.0, 3.0}, {0.0, 0.5}), error);

    // massive ties: cuts collide and are nudged apart, staying increasing
    std::vector<double> tied(100, 2.0);
    tied[0] = 1.0;
    tied[1] = 1.5;
    tied[98] = 3.0;
    tied[99] = 4.0;
    const Partition r = build_partition(tied, 4);
    CHECK(r.cuts[0] < r.cuts[1]);
    CHECK(r.cuts[1] < r.cuts[2]);
}

TEST_CASE("quantile partition lands on the normal quartiles for a large sample") {
    const std::size_t n = 1000000;
    CounterRng rng(42, 0);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng.normal(i, 0);
    const Partition p = build_partition(y, 4);
    const double q3 = 0.674489750196082;  // standard normal third quartile
    CHECK(std::fabs(p.cuts[0] + q3) < 0.01);
    CHECK(std::fabs(p.cuts[1]) < 0.01);
    CHECK(std::fabs(p.cuts[2] - q3) < 0.01);
}

TEST_CASE("mixture tables on an enumerated sample give exact fractions") {
    Partition part;
    part.cuts = {1.0, 2.0, 3.0};
    Dataset d(0);
    auto push = [&](double y, int t, int z, int v, int u) {
        Observation o;
        o.y = y;
        o.t = static_cast<uint8_t>(t);
        o.z = static_cast<uint8_t>(z);
        o.v = static_cast<uint8_t>(v);
        o.u = u;
        d.push_back(o);
    };
    // cell (0,0): five rows spread over all states and intervals
    push(0.5, 0, 0, 0, 0);
    push(2.5, 1, 0, 1, 1);  // cell (0,1), state 3, interval 2
    push(1.0, 0, 0, 0, 0);  // boundary value stays in interval 0
    push(3.5, 0, 1, 1, 1);  // cell (1,1), state 2, interval 3
    push(1.5, 1, 0, 0, 0);
    push(0.5, 0, 1, 0, 0);
    push(2.5, 0, 0, 0, 1);
    push(3.5, 1, 0, 0, 1);
    push(0.5, 0, 1, 0, 0);
    push(2.5, 1, 0, 1, 1);
    push(3.5, 0, 1, 1, 1);

    const MixtureTables t = build_mixture_tables(d, part, 2);
    CHECK(t.k == 4);
    CHECK(t.d == 4);
    CHECK(t.n == 11);
    CHECK(t.counts == std::array<std::int64_t, kCells>{5, 2, 2, 2});
    CHECK(t.pr_cell[0] == doctest::Approx(5.0 / 11).epsilon(1e-15));

    const MixtureCellTable& c0 = t.cell[0];
    CHECK(c0.pr_s == std::vector<double>{0.4, 0.2, 0.2, 0.2});
    CHECK(c0.pr_y == std::vector<double>{0.4, 0.2, 0.2, 0.2});
    CHECK(c0.joint[0 * 4 + 0] == 0.4);
    CHECK(c0.joint[1 * 4 + 1] == 0.2);
    CHECK(c0.joint[2 * 4 + 2] == 0.2);
    CHECK(c0.joint[3 * 4 + 3] == 0.2);
    CHECK(c0.ymom[0 * 4 + 0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(c0.ymom[1 * 4 + 1] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(c0.ymom[2 * 4 + 2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(c0.ymom[3 * 4 + 3] == doctest::Approx(0.7).epsilon(1e-15));

    const MixtureCellTable& c2 = t.cell[2];  // (z=0, v=1): state 3, interval 2
    CHECK(c2.pr_s == std::vector<double>{0.0, 0.0, 0.0, 1.0});
    CHECK(c2.joint[3 * 4 + 2] == 1.0);
    CHECK(c2.ymom[3 * 4 + 2] == 2.5);

    const auto w = pr_z_given_v_hat(t);
    CHECK(w[0] == doctest::Approx(2.0 / 7).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("mixture tables reject malformed input") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);

    Dataset no_u = simulate(fixtures::dgp_a(), 100, 7);
    CHECK_THROWS_AS(build_mixture_tables(no_u, part, 2), error);
    try {
        build_mixture_tables(no_u, part, 2);
    } catch (const error& e) {
        CHECK(e.code() == errc::schema_error);
    }

    Dataset d = simulate(g, 400, 7);
    CHECK_THROWS_AS(build_mixture_tables(d, part, 0), error);

    Dataset bad_u = d;
    bad_u.u[5] = 9;
    try {
        build_mixture_tables(bad_u, part, 2);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::schema_error);
    }

    Dataset bad_y = d;
    bad_y.y[17] = std::numeric_limits<double>::quiet_NaN();
    try {
        build_mixture_tables(bad_y, part, 2);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::non_finite_input);
    }

    Dataset one_arm = d;
    for (std::size_t i = 0; i < one_arm.size(); ++i) one_arm.z[i] = 0;
    try {
        build_mixture_tables(one_arm, part, 2);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::empty_cell);
    }
}

TEST_CASE("sampled mixture tables approach the oracle tables") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const auto truth = oracle_mixture_tables(g, part.cuts);
    const Dataset d = simulate(g, 200000, 11);
    const MixtureTables t = build_mixture_tables(d, part, 2);
    CHECK(t.counts[0] + t.counts[1] + t.counts[2] + t.counts[3] == t.n);
    for (int j = 0; j < kCells; ++j) {
        CHECK(std::fabs(t.pr_cell[static_cast<std::size_t>(j)] - 0.25) < 0.01);
        for (int s = 0; s < 4; ++s)
            CHECK(std::fabs(t.cell[static_cast<std::size_t>(j)].pr_s[static_cast<std::size_t>(s)] -
                            truth[static_cast<std::size_t>(j)].pr_s[static_cast<std::size_t>(s)]) <
                  0.02);
        for (int e = 0; e < 16; ++e) {
            CHECK(std::fabs(t.cell[static_cast<std::size_t>(j)].joint[static_cast<std::size_t>(e)] -
                            truth[static_cast<std::size_t>(j)].joint[static_cast<std::size_t>(e)]) <
                  0.02);
            CHECK(std::fabs(t.cell[static_cast<std::size_t>(j)].ymom[static_cast<std::size_t>(e)] -
                            truth[static_cast<std::size_t>(j)].ymom[static_cast<std::size_t>(e)]) <
                  0.08);
        }
    }
}

TEST_CASE("mixture tables are byte-stable across thread counts") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const Dataset d = simulate(g, 60000, 3);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const MixtureTables t1 = build_mixture_tables(d, part, 2);
    omp_set_num_threads(4);
    const MixtureTables t4 = build_mixture_tables(d, part, 2);
    omp_set_num_threads(saved);
    for (int j = 0; j < kCells; ++j) {
        const auto& a = t1.cell[static_cast<std::size_t>(j)];
        const auto& b = t4.cell[static_cast<std::size_t>(j)];
        CHECK(std::memcmp(a.joint.data(), b.joint.data(), a.joint.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(a.ymom.data(), b.ymom.data(), a.ymom.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(a.pr_s.data(), b.pr_s.data(), a.pr_s.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("square stack matches hand-computed mixture sums") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const QkSet q = build_qk(t);
    REQUIRE(q.rows == 4);
    REQUIRE(q.cols == 4);

    // every entry of every cell against a direct evaluation of the mixture
    for (int j = 0; j < kCells; ++j) {
        const int z = cell_z(j), v = cell_v(j);
        CHECK(q.at(j, 0, 0) == 1.0);
        for (int c = 1; c < 4; ++c) {
            double pr = 0.0;
            for (int s = 0; s < 4; ++s)
                pr += g.lam[static_cast<std::size_t>(j * 4 + s)] *
                      interval_pr(part, c - 1, mean_y(g, s, v), g.sigma);
            CHECK(q.at(j, 0, c) == doctest::Approx(pr).epsilon(1e-12));
        }
        for (int r = 1; r < 4; ++r) {
            double pr = 0.0;
            for (int s = 0; s < 4; ++s)
                pr += g.lam[static_cast<std::size_t>(j * 4 + s)] *
                      g.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>((r - 1) * 4 + s)];
            CHECK(q.at(j, r, 0) == doctest::Approx(pr).epsilon(1e-12));
            for (int c = 1; c < 4; ++c) {
                double pj = 0.0;
                for (int s = 0; s < 4; ++s)
                    pj += g.lam[static_cast<std::size_t>(j * 4 + s)] *
                          g.emit[static_cast<std::size_t>(z)]
                                [static_cast<std::size_t>((r - 1) * 4 + s)] *
                          interval_pr(part, c - 1, mean_y(g, s, v), g.sigma);
                CHECK(q.at(j, r, c) == doctest::Approx(pj).epsilon(1e-12));
            }
        }
    }

    // rectangular stack: all intervals, marginal row on top
    const QkSet qd = build_q_delta(t);
    CHECK(qd.rows == 4);
    CHECK(qd.cols == 4);
    for (int j = 0; j < kCells; ++j) {
        double mass = 0.0;
        for (int c = 0; c < 4; ++c) mass += qd.at(j, 0, c);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
        for (int c = 1; c < 4; ++c) CHECK(qd.at(j, 0, c - 1) == q.at(j, 0, c));
    }

    // mismatched or degenerate partitions are refused
    Partition ten;
    ten.cuts = oracle_partition(g, 10);
    const MixtureTables t10 = build_mixture_tables(g, ten);
    CHECK_THROWS_AS(build_qk(t10), error);
    Partition far;
    far.cuts = {-100.0, -99.0, -98.0};
    const MixtureTables tf = build_mixture_tables(g, far);
    try {
        build_qk(tf);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::partition_mismatch);
    }
}

TEST_CASE("two-state square stack equals the binary stack on indicator-transformed data") {
    const DgpSpecK g = dgp_a_mixture();
    const Dataset d = simulate(g, 40000, 19);
    const Partition part = build_partition(d.y, 2);
    const MixtureTables t = build_mixture_tables(d, part, 1);
    const QkSet qk = build_qk(t);

    // replace Y by 1{Y in the first interval} and T by 1{S = s_0}: the
    // binary moment matrices then carry exactly the same numbers
    Dataset ind = d;
    for (std::size_t i = 0; i < ind.size(); ++i) {
        ind.y[i] = d.y[i] <= part.cuts[0] ? 1.0 : 0.0;
        ind.t[i] = static_cast<uint8_t>(1 - d.t[i]);
    }
    const MomentEstimate m = estimate_moments_discrete(ind);
    const Q2Set q2 = build_q(m.m);
    for (int j = 0; j < kCells; ++j) {
        CHECK(qk.at(j, 0, 0) == 1.0);
        CHECK(qk.at(j, 0, 1) == q2.q[static_cast<std::size_t>(j)].b);
        CHECK(qk.at(j, 1, 0) == q2.q[static_cast<std::size_t>(j)].c);
        CHECK(qk.at(j, 1, 1) == q2.q[static_cast<std::size_t>(j)].d);
    }
}

TEST_CASE("mixture identification recovers the generating factors exactly") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const MixtureDecomposition dec = identify_mixture(build_qk(t));
    REQUIRE(dec.k == 4);
    CHECK(dec.k_u() == 2);

    const auto spectrum = tilde_spectrum(g);
    double min_gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i) {
        CHECK(dec.diag.eigenvalues[static_cast<std::size_t>(i)] ==
              doctest::Approx(spectrum[static_cast<std::size_t>(i)]).epsilon(1e-10));
        for (int j = i + 1; j < 4; ++j)
            min_gap = std::min(min_gap, std::fabs(spectrum[static_cast<std::size_t>(i)] -
                                                  spectrum[static_cast<std::size_t>(j)]));
    }
    CHECK(dec.diag.eig_gap == doctest::Approx(min_gap).epsilon(1e-8));

    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 4; ++i)
            for (int s = 0; s < 4; ++s) {
                CHECK(dec.emit(z, i, s) ==
                      doctest::Approx(
                          g.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>(i * 4 + s)])
                          .epsilon(1e-10));
                if (i > 0) CHECK(dec.lt(z, i, s) == dec.emit(z, i - 1, s));
                else CHECK(dec.lt(z, 0, s) == 1.0);
            }
    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < 4; ++s)
            CHECK(dec.lam(j, s) ==
                  doctest::Approx(g.lam[static_cast<std::size_t>(j * 4 + s)]).epsilon(1e-10));
    for (int v = 0; v < 2; ++v)
        for (int i = 1; i < 4; ++i)
            for (int s = 0; s < 4; ++s)
                CHECK(dec.ly(v, i, s) ==
                      doctest::Approx(interval_pr(part, i - 1, mean_y(g, s, v), g.sigma))
                          .epsilon(1e-10));

    // emission columns close to one through the omitted state
    for (int z = 0; z < 2; ++z)
        for (int s = 0; s < 4; ++s) {
            double colsum = 0.0;
            for (int i = 0; i < 4; ++i) colsum += dec.emit(z, i, s);
            CHECK(colsum == doctest::Approx(1.0).epsilon(1e-9));
        }

    CHECK(dec.diag.dominance_margin == doctest::Approx(0.52).epsilon(1e-8));
    CHECK(dec.diag.recon_err < 1e-10);
    // far-tail interval probabilities sit at ~1e-15, so dust below zero is honest
    CHECK(dec.diag.min_prob_margin > -1e-12);
    CHECK(dec.diag.max_cond < 1e4);
    CHECK(dec.diag.l_y_cond < 100.0);
    CHECK(dec.diag.warnings.empty());
}

TEST_CASE("mixture identification agrees with the binary route when K_u = 1") {
    const DgpSpecK gk = dgp_a_mixture();
    Partition part;
    part.cuts = oracle_partition(gk, 2);
    const MixtureDecomposition mix = identify_mixture(build_qk(build_mixture_tables(gk, part)));
    const DecompositionSet two = identify_prop1(build_q(oracle_moments(fixtures::dgp_a())));

    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < 2; ++s)
            CHECK(mix.lam(j, s) ==
                  doctest::Approx(two.lambda[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)])
                      .epsilon(1e-8));
    for (int z = 0; z < 2; ++z) {
        // Pr(T=1 | T*=s, z): row 1 of the binary factor, second emission row
        CHECK(mix.emit(z, 1, 0) ==
              doctest::Approx(two.l_t[static_cast<std::size_t>(z)].c).epsilon(1e-8));
        CHECK(mix.emit(z, 1, 1) ==
              doctest::Approx(two.l_t[static_cast<std::size_t>(z)].d).epsilon(1e-8));
    }
    std::vector<double> ev = mix.diag.eigenvalues;
    std::sort(ev.begin(), ev.end());
    CHECK(ev[0] == doctest::Approx(two.diag.eigenvalues[0]).epsilon(1e-8));
    CHECK(ev[1] == doctest::Approx(two.diag.eigenvalues[1]).epsilon(1e-8));
}

TEST_CASE("relabeling the latent groups permutes every recovered factor consistently") {
    const DgpSpecK g = dgp_m_asym();
    DgpSpecK h = g;  // swap the two U* groups: state s = 2u+t -> s xor 2
    auto sm = [](int s) { return s ^ 2; };
    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < 4; ++s)
            h.lam[static_cast<std::size_t>(j * 4 + sm(s))] = g.lam[static_cast<std::size_t>(j * 4 + s)];
    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 4; ++c)
                h.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>(sm(i) * 4 + sm(c))] =
                    g.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>(i * 4 + c)];
    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
            h.alpha[static_cast<std::size_t>((1 - u) * 2 + v)] =
                g.alpha[static_cast<std::size_t>(u * 2 + v)];
            h.beta[static_cast<std::size_t>((1 - u) * 2 + v)] =
                g.beta[static_cast<std::size_t>(u * 2 + v)];
        }
    validate(h);

    Partition part;
    part.cuts = oracle_partition(g, 4);  // same outcome mixture, same cuts
    const MixtureTables tg = build_mixture_tables(g, part);
    const MixtureTables th = build_mixture_tables(h, part);
    const MixtureDecomposition dg = identify_mixture(build_qk(tg));
    const MixtureDecomposition dh = identify_mixture(build_qk(th));

    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < 4; ++s)
            CHECK(dh.lam(j, sm(s)) == doctest::Approx(dg.lam(j, s)).epsilon(1e-9));
    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 4; ++c)
                CHECK(dh.emit(z, sm(i), sm(c)) == doctest::Approx(dg.emit(z, i, c)).epsilon(1e-9));

    const auto ag = identify_alpha_beta_hetero(dg, g.pr_z_given_v, tg);
    const auto ah = identify_alpha_beta_hetero(dh, h.pr_z_given_v, th);
    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
            CHECK(ah.alpha[static_cast<std::size_t>((1 - u) * 2 + v)] ==
                  doctest::Approx(ag.alpha[static_cast<std::size_t>(u * 2 + v)]).epsilon(1e-9));
            CHECK(ah.beta[static_cast<std::size_t>((1 - u) * 2 + v)] ==
                  doctest::Approx(ag.beta[static_cast<std::size_t>(u * 2 + v)]).epsilon(1e-9));
        }
}

TEST_CASE("heterogeneous coefficients are recovered for every latent group") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const MixtureDecomposition dec = identify_mixture(build_qk(t));
    const HeteroAlphaBeta ab = identify_alpha_beta_hetero(dec, pr_z_given_v_hat(t), t);
    REQUIRE(ab.k_u == 2);

    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
            CHECK(ab.alpha[static_cast<std::size_t>(u * 2 + v)] ==
                  doctest::Approx(g.alpha[static_cast<std::size_t>(u * 2 + v)]).epsilon(1e-8));
            CHECK(ab.beta[static_cast<std::size_t>(u * 2 + v)] ==
                  doctest::Approx(g.beta[static_cast<std::size_t>(u * 2 + v)]).epsilon(1e-8));
        }
    for (int s = 0; s < 4; ++s)
        for (int v = 0; v < 2; ++v)
            CHECK(ab.ey_sstar[static_cast<std::size_t>(s * 2 + v)] ==
                  doctest::Approx(oracle_mean_y_sstar(g, s, v)).epsilon(1e-8));
    for (int j = 0; j < kCells; ++j)
        for (int u = 0; u < 2; ++u) {
            const double m0 = g.lam[static_cast<std::size_t>(j * 4 + 2 * u)];
            const double m1 = g.lam[static_cast<std::size_t>(j * 4 + 2 * u + 1)];
            CHECK(ab.pr_t1_u[static_cast<std::size_t>(j)][static_cast<std::size_t>(u)] ==
                  doctest::Approx(m1 / (m0 + m1)).epsilon(1e-9));
        }

    // flat treatment effect stays flat across groups
    DgpSpecK flat = g;
    flat.beta = {2.0, 2.0, 2.0, 2.0};
    Partition pf;
    pf.cuts = oracle_partition(flat, 4);
    const MixtureTables tf = build_mixture_tables(flat, pf);
    const MixtureDecomposition df = identify_mixture(build_qk(tf));
    const HeteroAlphaBeta abf = identify_alpha_beta_hetero(df, flat.pr_z_given_v, tf);
    for (int i = 0; i < 4; ++i)
        CHECK(abf.beta[static_cast<std::size_t>(i)] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("an instrument that misses one latent group is reported by name") {
    DgpSpecK g = fixtures::dgp_m();
    // same treatment odds at both instrument arms for U*=0, v=0
    g.lam[4] = 0.28;
    g.lam[5] = 0.08;
    g.lam[6] = 0.24;
    g.lam[7] = 0.40;
    validate(g);
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const MixtureDecomposition dec = identify_mixture(build_qk(t));
    try {
        identify_alpha_beta_hetero(dec, g.pr_z_given_v, t);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::irrelevant_instrument_at_u);
        CHECK(std::string(e.what()).find("U*=0") != std::string::npos);
        CHECK(std::string(e.what()).find("v=0") != std::string::npos);
    }
}

TEST_CASE("outcome distribution: self-consistency, total mass, and decile recovery") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const MixtureDecomposition dec = identify_mixture(build_qk(t));

    // the identifying partition reproduces the outcome factor rows
    const OutcomeDist self = conditional_outcome_dist(dec, build_q_delta(t));
    CHECK(self.cross_err < 1e-10);
    for (int v = 0; v < 2; ++v)
        for (int s = 0; s < 4; ++s) {
            double row = 0.0;
            for (int j = 0; j < 4; ++j) row += self.at(v, s, j);
            CHECK(row == doctest::Approx(1.0).epsilon(1e-10));
            for (int j = 0; j + 1 < 4; ++j)
                CHECK(self.at(v, s, j) == doctest::Approx(dec.ly(v, 1 + j, s)).epsilon(1e-10));
        }

    // one interval covering everything: all probabilities one
    Partition whole;
    const OutcomeDist ones = conditional_outcome_dist(dec, build_q_delta(build_mixture_tables(g, whole)));
    for (int v = 0; v < 2; ++v)
        for (int s = 0; s < 4; ++s) CHECK(ones.at(v, s, 0) == doctest::Approx(1.0).epsilon(1e-10));

    // deciles against the error-function evaluation
    Partition dc;
    dc.cuts = oracle_partition(g, 10);
    const OutcomeDist deciles = conditional_outcome_dist(dec, build_q_delta(build_mixture_tables(g, dc)));
    CHECK(deciles.d == 10);
    CHECK(deciles.cross_err < 1e-9);
    for (int v = 0; v < 2; ++v)
        for (int s = 0; s < 4; ++s)
            for (int j = 0; j < 10; ++j)
                CHECK(deciles.at(v, s, j) ==
                      doctest::Approx(interval_pr(dc, j, mean_y(g, s, v), g.sigma)).epsilon(1e-9));
}

TEST_CASE("outcome distribution cross-check fires when the arms disagree") {
    const DgpSpecK g = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(g, 4);
    const MixtureTables t = build_mixture_tables(g, part);
    const MixtureDecomposition dec = identify_mixture(build_qk(t));
    QkSet qd = build_q_delta(t);
    qd.q[0][2] += 0.05;  // corrupt one z=0 entry
    try {
        conditional_outcome_dist(dec, qd);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::cross_check_failed);
    }
    // row-count mismatch is refused outright
    QkSet wrong = build_q_delta(t);
    wrong.rows = 3;
    for (auto& cellq : wrong.q) cellq.resize(3 * 4);
    CHECK_THROWS_AS(conditional_outcome_dist(dec, wrong), error);
}

TEST_CASE("mixture identification failure modes are reported by name") {
    const DgpSpecK base = fixtures::dgp_m();
    Partition part;
    part.cuts = oracle_partition(base, 4);

    // latent masses equal in every cell: cross-ratio spectrum collapses to 1
    DgpSpecK flat = base;
    for (int j = 1; j < kCells; ++j)
        for (int s = 0; s < 4; ++s)
            flat.lam[static_cast<std::size_t>(j * 4 + s)] = flat.lam[static_cast<std::size_t>(s)];
    try {
        identify_mixture(build_qk(build_mixture_tables(flat, part)));
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::eigenvalues_not_distinct);
    }

    // a latent state whose most likely report is another state
    DgpSpecK confused = base;
    for (int z = 0; z < 2; ++z) {
        confused.emit[static_cast<std::size_t>(z)] = {0.70, 0.60, 0.10, 0.10,   //
                                                      0.10, 0.20, 0.10, 0.10,   //
                                                      0.10, 0.10, 0.70, 0.10,   //
                                                      0.10, 0.10, 0.10, 0.70};
    }
    validate(confused);
    try {
        identify_mixture(build_qk(build_mixture_tables(confused, part)));
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::no_dominant_labeling);
        CHECK(std::string(e.what()).find("margin") != std::string::npos);
    }

    // two identical emission columns: the cell matrices lose rank
    DgpSpecK twin = base;
    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 4; ++i) {
            const double c0 = (i == 0) ? 0.55 : (i == 1 ? 0.25 : 0.10);
            twin.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>(i * 4 + 0)] = c0;
            twin.emit[static_cast<std::size_t>(z)][static_cast<std::size_t>(i * 4 + 1)] = c0;
        }
    validate(twin);
    try {
        identify_mixture(build_qk(build_mixture_tables(twin, part)));
        CHECK(false);
    } catch (const error& e) {
        CHECK((e.code() == errc::singular_q || e.code() == errc::no_dominant_labeling));
    }

    // malformed stacks
    QkSet qk = build_qk(build_mixture_tables(base, part));
    QkSet nan = qk;
    nan.q[0][5] = std::numeric_limits<double>::quiet_NaN();
    try {
        identify_mixture(nan);
        CHECK(false);
    } catch (const error& e) {
        CHECK(e.code() == errc::non_finite_input);
    }
    QkSet rect = qk;
    rect.cols = 3;
    CHECK_THROWS_AS(identify_mixture(rect), error);
    QkSet odd;
    odd.rows = odd.cols = 3;
    for (auto& cq : odd.q) cq.assign(9, 0.5);
    CHECK_THROWS_AS(identify_mixture(odd), error);
}

TEST_CASE("pipeline identifies a sampled mixture and is byte-stable") {
    const DgpSpecK g = fixtures::dgp_m();
    const Dataset d = simulate(g, 500000, 29);
    Tolerances tol;
    tol.prob = 0.1;  // sampled tables put recovered tail probabilities slightly outside [0,1]
    const MixturePipelineResult r = mixture_pipeline(d, 2, tol);
    CHECK(!r.partition_searched);
    CHECK(r.partition_trials == 1);
    CHECK(r.tables.n == 500000);

    // loose bands: these guard against mislabeled states, not sampling noise
    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 4; ++i)
            for (int s = 0; s < 4; ++s)
                CHECK(std::fabs(r.dec.emit(z, i, s) -
                                g.emit[static_cast<std::size_t>(z)]
                                      [static_cast<std::size_t>(i * 4 + s)]) < 0.15);
    for (int j = 0; j < kCells; ++j)
        for (int s = 0; s < 4; ++s)
            CHECK(std::fabs(r.dec.lam(j, s) - g.lam[static_cast<std::size_t>(j * 4 + s)]) < 0.08);
    const HeteroAlphaBeta ab = identify_alpha_beta_hetero(r.dec, pr_z_given_v_hat(r.tables), r.tables, tol);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::fabs(ab.alpha[static_cast<std::size_t>(i)] -
                        g.alpha[static_cast<std::size_t>(i)]) < 0.5);
        CHECK(std::fabs(ab.beta[static_cast<std::size_t>(i)] -
                        g.beta[static_cast<std::size_t>(i)]) < 0.6);
    }

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const MixturePipelineResult r1 = mixture_pipeline(d, 2, tol);
    omp_set_num_threads(4);
    const MixturePipelineResult r4 = mixture_pipeline(d, 2, tol);
    omp_set_num_threads(saved);
    for (int j = 0; j < kCells; ++j) {
        CHECK(std::memcmp(r1.dec.lambda[static_cast<std::size_t>(j)].data(),
                          r4.dec.lambda[static_cast<std::size_t>(j)].data(),
                          4 * sizeof(double)) == 0);
        CHECK(std::memcmp(r1.dec.lambda[static_cast<std::size_t>(j)].data(),
                          r.dec.lambda[static_cast<std::size_t>(j)].data(),
                          4 * sizeof(double)) == 0);
    }
}

TEST_CASE("pipeline level search recovers from a singular median cut") {
    // enumerated two-state world with a discrete outcome: the latent types
    // share their CDF at the median, so the equal-probability cut makes the
    // outcome factor exactly singular, while any cut at y=2 separates them
    const std::array<double, 4> p_t1{0.4, 0.6, 0.3, 0.7};
    const std::array<std::array<double, 2>, 2> mis{{{0.10, 0.85}, {0.15, 0.80}}};
    const std::array<std::array<double, 4>, 2> ydist{
        {{0.3, 0.2, 0.2, 0.3}, {0.1, 0.4, 0.3, 0.2}}};
    Dataset d(0);
    const int m = 10000;
    for (int j = 0; j < kCells; ++j) {
        int placed = 0;
        for (int ts = 0; ts < 2; ++ts)
            for (int tobs = 0; tobs < 2; ++tobs)
                for (int yv = 0; yv < 4; ++yv) {
                    const double lamw = ts ? p_t1[static_cast<std::size_t>(j)]
                                           : 1.0 - p_t1[static_cast<std::size_t>(j)];
                    const double emw = tobs
                                           ? mis[static_cast<std::size_t>(cell_z(j))]
                                                [static_cast<std::size_t>(ts)]
                                           : 1.0 - mis[static_cast<std::size_t>(cell_z(j))]
                                                      [static_cast<std::size_t>(ts)];
                    const double w = lamw * emw *
                                     ydist[static_cast<std::size_t>(ts)][static_cast<std::size_t>(yv)];
                    const int cnt = static_cast<int>(std::llround(w * m));
                    placed += cnt;
                    Observation o;
                    o.y = yv;
                    o.t = static_cast<uint8_t>(tobs);
                    o.z = static_cast<uint8_t>(cell_z(j));
                    o.v = static_cast<uint8_t>(cell_v(j));
                    o.u = 0;
                    for (int c = 0; c < cnt; ++c) d.push_back(o);
                }
        REQUIRE(placed == m);
    }

    const MixturePipelineResult r = mixture_pipeline(d, 1);
    CHECK(r.partition_searched);
    CHECK(r.partition_trials == 11);
    CHECK(r.part.cuts[0] == doctest::Approx(2.0).epsilon(1e-12));

    // the enumerated sample is the population: recovery is exact
    for (int j = 0; j < kCells; ++j) {
        CHECK(r.dec.lam(j, 1) == doctest::Approx(p_t1[static_cast<std::size_t>(j)]).epsilon(1e-9));
        CHECK(r.dec.lam(j, 0) ==
              doctest::Approx(1.0 - p_t1[static_cast<std::size_t>(j)]).epsilon(1e-9));
    }
    for (int z = 0; z < 2; ++z)
        for (int ts = 0; ts < 2; ++ts)
            CHECK(r.dec.emit(z, 1, ts) ==
                  doctest::Approx(mis[static_cast<std::size_t>(z)][static_cast<std::size_t>(ts)])
                      .epsilon(1e-9));

    const HeteroAlphaBeta ab =
        identify_alpha_beta_hetero(r.dec, pr_z_given_v_hat(r.tables), r.tables);
    // E[Y|T*=0] = 1.5, E[Y|T*=1] = 1.6 for the two crafted outcome laws
    for (int v = 0; v < 2; ++v) {
        CHECK(ab.alpha[static_cast<std::size_t>(v)] == doctest::Approx(1.5).epsilon(1e-9));
        CHECK(ab.beta[static_cast<std::size_t>(v)] == doctest::Approx(0.1).epsilon(1e-7));
    }
}
