#include "miv/effects.hpp"

#include <cmath>

#include "miv/errors.hpp"

namespace miv {

namespace {

constexpr double kMassFloor = 1e-12;

void check_weights(const std::vector<double>& w, int k_u, int v, const char* what) {
    double sum = 0.0;
    for (int u = 0; u < k_u; ++u) {
        const double p = w[static_cast<std::size_t>(u * 2 + v)];
        if (!(p >= 0.0))
            raise(errc::invalid_probability, std::string(what) + " weight for U*=" +
                                                 std::to_string(u) + ", v=" + std::to_string(v) +
                                                 " is " + std::to_string(p));
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-8)
        raise(errc::invalid_probability, std::string(what) + " weights at v=" +
                                             std::to_string(v) + " sum to " + std::to_string(sum));
}

}  // namespace

double late(const std::array<double, 2>& e_y_by_z, const std::array<double, 2>& e_tstar_by_z) {
    const double denom = e_tstar_by_z[1] - e_tstar_by_z[0];
    if (std::fabs(denom) <= kMassFloor)
        raise(errc::zero_denominator,
              "the instrument does not shift the latent treatment (Pr(T*=1) moves by " +
                  std::to_string(denom) + ")");
    return (e_y_by_z[1] - e_y_by_z[0]) / denom;
}

EffectsReport ate_tt_tut(const MixtureDecomposition& mix, const HeteroAlphaBeta& ab,
                         const std::array<double, 2>& pr_z_given_v,
                         std::optional<double> pr_v1) {
    const int K = mix.k;
    const int ku = ab.k_u;
    if (K != 2 * ku || static_cast<int>(ab.beta.size()) != 2 * ku ||
        static_cast<int>(ab.ey_sstar.size()) != 2 * K)
        raise(errc::invalid_spec, "the decomposition and the coefficient table disagree about K");
    for (double pz : pr_z_given_v)
        if (!(pz > 0.0 && pz < 1.0))
            raise(errc::invalid_spec,
                  "Pr(Z=1|v) = " + std::to_string(pz) + " must lie strictly inside (0,1)");

    EffectsReport out;
    out.k_u = ku;
    out.beta = ab.beta;
    out.pr_u_v.assign(static_cast<std::size_t>(2 * ku), 0.0);
    out.pr_u_t1.assign(static_cast<std::size_t>(2 * ku), 0.0);
    out.pr_u_t0.assign(static_cast<std::size_t>(2 * ku), 0.0);
    out.route = "mixture eigendecomposition, K=" + std::to_string(K);

    // per-v Wald pieces kept for the pooled ratio
    double d_ey[2], d_p[2];

    for (int v = 0; v < 2; ++v) {
        const double pz1 = pr_z_given_v[static_cast<std::size_t>(v)];

        // Pr(S*=s, Z=z | v) summed over z
        std::vector<double> pr_sv(static_cast<std::size_t>(K), 0.0);
        for (int z = 0; z < 2; ++z) {
            const double pz = z ? pz1 : 1.0 - pz1;
            for (int s = 0; s < K; ++s)
                pr_sv[static_cast<std::size_t>(s)] += pz * mix.lam(cell_index(z, v), s);
        }
        double pt1 = 0.0;
        for (int u = 0; u < ku; ++u) pt1 += pr_sv[static_cast<std::size_t>(2 * u + 1)];
        const double pt0 = 1.0 - pt1;
        if (pt1 < kMassFloor)
            raise(errc::degenerate_treatment_mass,
                  "Pr(T*=1|v=" + std::to_string(v) + ") vanishes, nothing to condition TT on");
        if (pt0 < kMassFloor)
            raise(errc::degenerate_treatment_mass,
                  "Pr(T*=0|v=" + std::to_string(v) + ") vanishes, nothing to condition TUT on");
        out.pr_t1[static_cast<std::size_t>(v)] = pt1;

        double ate = 0.0, tt = 0.0, tut = 0.0;
        for (int u = 0; u < ku; ++u) {
            const std::size_t uv = static_cast<std::size_t>(u * 2 + v);
            const double m0 = pr_sv[static_cast<std::size_t>(2 * u)];
            const double m1 = pr_sv[static_cast<std::size_t>(2 * u + 1)];
            out.pr_u_v[uv] = m0 + m1;
            out.pr_u_t1[uv] = m1 / pt1;
            out.pr_u_t0[uv] = m0 / pt0;
            ate += ab.beta[uv] * out.pr_u_v[uv];
            tt += ab.beta[uv] * out.pr_u_t1[uv];
            tut += ab.beta[uv] * out.pr_u_t0[uv];
        }
        out.ate[static_cast<std::size_t>(v)] = ate;
        out.tt[static_cast<std::size_t>(v)] = tt;
        out.tut[static_cast<std::size_t>(v)] = tut;
        check_weights(out.pr_u_v, ku, v, "Pr(U*|v)");
        check_weights(out.pr_u_t1, ku, v, "Pr(U*|T*=1,v)");
        check_weights(out.pr_u_t0, ku, v, "Pr(U*|T*=0,v)");

        // Wald ratio from the same identified pieces
        double ey[2], p1[2];
        for (int z = 0; z < 2; ++z) {
            double e = 0.0, p = 0.0;
            for (int s = 0; s < K; ++s) {
                const double w = mix.lam(cell_index(z, v), s);
                e += w * ab.ey_sstar[static_cast<std::size_t>(s * 2 + v)];
                if (s & 1) p += w;
            }
            ey[z] = e;
            p1[z] = p;
        }
        out.late[static_cast<std::size_t>(v)] = late({ey[0], ey[1]}, {p1[0], p1[1]});
        d_ey[v] = ey[1] - ey[0];
        d_p[v] = p1[1] - p1[0];
    }

    if (pr_v1) {
        const double w1 = *pr_v1;
        if (!(w1 > 0.0 && w1 < 1.0))
            raise(errc::invalid_spec,
                  "Pr(V=1) = " + std::to_string(w1) + " must lie strictly inside (0,1)");
        const std::array<double, 2> wv{1.0 - w1, w1};
        EffectsAggregate agg;
        double num_tt = 0, num_tut = 0, num_late = 0, den_late = 0;
        for (int v = 0; v < 2; ++v) {
            const std::size_t sv = static_cast<std::size_t>(v);
            agg.ate += wv[sv] * out.ate[sv];
            agg.pr_t1 += wv[sv] * out.pr_t1[sv];
            num_tt += wv[sv] * out.pr_t1[sv] * out.tt[sv];
            num_tut += wv[sv] * (1.0 - out.pr_t1[sv]) * out.tut[sv];
            num_late += wv[sv] * d_ey[v];
            den_late += wv[sv] * d_p[v];
        }
        agg.tt = num_tt / agg.pr_t1;
        agg.tut = num_tut / (1.0 - agg.pr_t1);
        agg.late = late({0.0, num_late}, {0.0, den_late});
        out.pooled = agg;
    }
    return out;
}

}  // namespace miv
