#include "miv/identk.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "miv/errors.hpp"
#include "miv/sum.hpp"

namespace miv {

namespace {

using EMat = Eigen::MatrixXd;

std::string cell_name(int j) {
    return "Q(z=" + std::to_string(cell_z(j)) + ",v=" + std::to_string(cell_v(j)) + ")";
}

EMat to_mat(const QkSet& q, int cell) {
    EMat m(q.rows, q.cols);
    for (int r = 0; r < q.rows; ++r)
        for (int c = 0; c < q.cols; ++c) m(r, c) = q.at(cell, r, c);
    return m;
}

double cond_k(const EMat& m) {
    Eigen::JacobiSVD<EMat> svd(m);
    const auto& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
    return s(0) / smin;
}

// a * b^{-1} without forming the inverse
EMat mul_inv(const EMat& a, const EMat& b) {
    return b.transpose().partialPivLu().solve(a.transpose()).transpose();
}

struct EigK {
    std::vector<double> vals;
    EMat vecs;  // columns scaled to first entry 1
};

// general real eigendecomposition with the gates shared by every factor:
// near-real spectrum, pairwise-distinct eigenvalues, usable first entries
EigK eig_k(const EMat& m, const Tolerances& tol, const std::string& what) {
    const int k = static_cast<int>(m.rows());
    Eigen::EigenSolver<EMat> es(m);
    if (es.info() != Eigen::Success)
        raise(errc::no_convergence, what + ": the real Schur iteration did not converge");
    const auto lam = es.eigenvalues();
    double scale = 1.0;
    for (int i = 0; i < k; ++i) scale = std::max(scale, std::abs(lam(i)));
    for (int i = 0; i < k; ++i)
        if (std::fabs(lam(i).imag()) > tol.imag * scale)
            raise(errc::complex_eigenvalues,
                  what + " has a complex eigenvalue (" + std::to_string(lam(i).real()) + " + " +
                      std::to_string(lam(i).imag()) + "i); the cell matrices are inconsistent " +
                      "with a real mixture");
    EigK out;
    out.vals.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.vals[static_cast<std::size_t>(i)] = lam(i).real();
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j)
            if (std::fabs(out.vals[static_cast<std::size_t>(i)] -
                          out.vals[static_cast<std::size_t>(j)]) <= tol.eig_gap * scale)
                raise(errc::eigenvalues_not_distinct,
                      what + " has coinciding eigenvalues (" +
                          std::to_string(out.vals[static_cast<std::size_t>(i)]) + ", " +
                          std::to_string(out.vals[static_cast<std::size_t>(j)]) +
                          "); the instrument does not separate the latent states");
    const Eigen::MatrixXcd vc = es.eigenvectors();
    out.vecs.resize(k, k);
    for (int j = 0; j < k; ++j) {
        // rotate away the arbitrary complex phase, then require a real vector
        int imax = 0;
        for (int i = 1; i < k; ++i)
            if (std::abs(vc(i, j)) > std::abs(vc(imax, j))) imax = i;
        const std::complex<double> ph = vc(imax, j) / std::abs(vc(imax, j));
        const Eigen::VectorXcd w = vc.col(j) * std::conj(ph);
        const double wnorm = w.norm();
        for (int i = 0; i < k; ++i)
            if (std::fabs(w(i).imag()) > tol.imag * std::max(1.0, wnorm))
                raise(errc::complex_eigenvalues, what + " has a genuinely complex eigenvector");
        if (std::abs(w(0).real()) <= tol.vec * wnorm)
            raise(errc::degenerate_eigenvector,
                  what + ": an eigenvector has a vanishing first entry and cannot be scaled " +
                      "to the probability normalization");
        out.vecs.col(j) = w.real() / w(0).real();
    }
    return out;
}

// exact assignment of columns to slots maximizing the total gain, by
// dynamic programming over slot subsets (k <= 16); pick[col] = slot
std::vector<int> best_assignment(const std::vector<double>& gain, int k, double* total) {
    const std::uint32_t full = (1u << k) - 1u;
    const double neg = -std::numeric_limits<double>::infinity();
    std::vector<double> dp(full + 1u, neg);
    std::vector<std::int8_t> choice(full + 1u, -1);
    dp[0] = 0.0;
    for (std::uint32_t mask = 1; mask <= full; ++mask) {
        const int col = std::popcount(mask) - 1;
        for (int s = 0; s < k; ++s) {
            if (!(mask & (1u << s))) continue;
            const double cand =
                dp[mask ^ (1u << s)] + gain[static_cast<std::size_t>(col * k + s)];
            if (cand > dp[mask]) {
                dp[mask] = cand;
                choice[mask] = static_cast<std::int8_t>(s);
            }
        }
    }
    std::vector<int> pick(static_cast<std::size_t>(k));
    std::uint32_t mask = full;
    for (int col = k - 1; col >= 0; --col) {
        const int s = choice[mask];
        pick[static_cast<std::size_t>(col)] = s;
        mask ^= 1u << s;
    }
    if (total) *total = dp[full];
    return pick;
}

// full emission column implied by a scaled eigenvector: the first k-1
// observed states are read off directly, the last one closes the column
Eigen::VectorXd full_emission_col(const EMat& vecs, int j) {
    const int k = static_cast<int>(vecs.rows());
    Eigen::VectorXd e(k);
    double acc = 0.0;
    for (int i = 0; i + 1 < k; ++i) {
        e(i) = vecs(i + 1, j);
        acc += e(i);
    }
    e(k - 1) = 1.0 - acc;
    return e;
}

std::string perm_string(const std::vector<int>& pick) {
    std::string s = "{";
    for (std::size_t i = 0; i < pick.size(); ++i)
        s += (i ? "," : "") + std::to_string(pick[i]);
    return s + "}";
}

// reorder eigen columns so that column s is the one assigned latent state s
void apply_labels(const EigK& e, const std::vector<int>& pick, EMat& vecs,
                  std::vector<double>& vals) {
    const int k = static_cast<int>(e.vecs.rows());
    vecs.resize(k, k);
    vals.assign(static_cast<std::size_t>(k), 0.0);
    for (int col = 0; col < k; ++col) {
        const int s = pick[static_cast<std::size_t>(col)];
        vecs.col(s) = e.vecs.col(col);
        vals[static_cast<std::size_t>(s)] = e.vals[static_cast<std::size_t>(col)];
    }
}

// label a companion factor by pairing its spectrum to the target values
EMat match_by_eigenvalue(const EigK& e, const std::vector<double>& target,
                         const std::string& /*what*/) {
    const int k = static_cast<int>(e.vecs.rows());
    std::vector<double> gain(static_cast<std::size_t>(k * k));
    for (int col = 0; col < k; ++col)
        for (int s = 0; s < k; ++s)
            gain[static_cast<std::size_t>(col * k + s)] =
                -std::fabs(e.vals[static_cast<std::size_t>(col)] -
                           target[static_cast<std::size_t>(s)]);
    const std::vector<int> pick = best_assignment(gain, k, nullptr);
    EMat vecs;
    std::vector<double> vals;
    apply_labels(e, pick, vecs, vals);
    return vecs;
}

// smallest diagonal lead of the emission columns: positive iff the matrix
// is strictly diagonally dominant in the column sense
double dominance_margin_of(const EMat& a) {
    const int k = static_cast<int>(a.rows());
    double margin = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
        double best_off = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < k; ++i)
            if (i != j) best_off = std::max(best_off, a(i, j));
        margin = std::min(margin, a(j, j) - best_off);
    }
    return margin;
}

double audit_prob(double& p, double margin_so_far, const Tolerances& tol,
                  const std::string& what) {
    if (p < -tol.prob || p > 1.0 + tol.prob)
        raise(errc::invalid_probability,
              what + " = " + std::to_string(p) + " is outside [0,1] beyond tolerance");
    const double margin = std::min(p, 1.0 - p);
    p = std::min(1.0, std::max(0.0, p));
    return std::min(margin_so_far, margin);
}

}  // namespace

int Partition::interval(double yv) const {
    const auto it = std::lower_bound(cuts.begin(), cuts.end(), yv);
    return static_cast<int>(it - cuts.begin());
}

Partition build_partition_levels(const std::vector<double>& y_sample,
                                 const std::vector<double>& levels) {
    for (std::size_t j = 0; j < levels.size(); ++j) {
        if (!(levels[j] > 0.0) || !(levels[j] < 1.0))
            raise(errc::invalid_spec, "quantile levels must lie strictly inside (0,1)");
        if (j > 0 && !(levels[j] > levels[j - 1]))
            raise(errc::invalid_spec, "quantile levels must be strictly increasing");
    }
    const int want = static_cast<int>(levels.size()) + 1;
    std::vector<double> ys = y_sample;
    for (double yv : ys)
        if (!std::isfinite(yv))
            raise(errc::non_finite_input, "outcome column contains non-finite values");
    std::sort(ys.begin(), ys.end());
    std::size_t distinct = ys.empty() ? 0 : 1;
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (ys[i] != ys[i - 1]) ++distinct;
    if (distinct < static_cast<std::size_t>(want))
        raise(errc::too_few_distinct_values,
              "partition into " + std::to_string(want) + " intervals needs at least " +
                  std::to_string(want) + " distinct outcome values (sample has " +
                  std::to_string(distinct) + ")");

    Partition p;
    p.cuts.resize(levels.size());
    const std::size_t n = ys.size();
    for (std::size_t j = 0; j < levels.size(); ++j) {
        const double h = static_cast<double>(n - 1) * levels[j];
        const std::size_t lo = static_cast<std::size_t>(h);
        const double frac = h - static_cast<double>(lo);
        p.cuts[j] = lo + 1 < n ? ys[lo] + frac * (ys[lo + 1] - ys[lo]) : ys[n - 1];
    }
    for (std::size_t j = 1; j < p.cuts.size(); ++j)
        if (!(p.cuts[j] > p.cuts[j - 1]))
            p.cuts[j] = std::nextafter(p.cuts[j - 1], std::numeric_limits<double>::infinity());
    return p;
}

Partition build_partition(const std::vector<double>& y_sample, int ncells) {
    if (ncells < 2) raise(errc::invalid_spec, "partition needs at least two intervals");
    std::vector<double> levels(static_cast<std::size_t>(ncells - 1));
    for (int j = 1; j < ncells; ++j)
        levels[static_cast<std::size_t>(j - 1)] = static_cast<double>(j) / ncells;
    return build_partition_levels(y_sample, levels);
}

MixtureTables build_mixture_tables(const Dataset& d, const Partition& part, int k_u) {
    if (k_u < 1) raise(errc::invalid_spec, "the latent group count must be positive");
    if (!d.has_u())
        raise(errc::schema_error, "mixture tables need the proxy column u");
    const int K = 2 * k_u;
    const int D = part.cells();
    const std::size_t n = d.size();

    // per cell: [count, pr_s(K), pr_y(D), joint(K*D), ymom(K*D)], then two
    // global slots counting rows with non-finite y / out-of-range u
    const int stride = 1 + K + D + 2 * K * D;
    const int nacc = kCells * stride + 2;
    std::vector<double> out(static_cast<std::size_t>(nacc));
    reduce_chunked(n, nacc, out.data(), [&](std::size_t i, Kahan* acc) {
        const double yv = d.y[i];
        if (!std::isfinite(yv)) {
            acc[nacc - 2].add(1.0);
            return;
        }
        const int u = d.u[i];
        if (u < 0 || u >= k_u) {
            acc[nacc - 1].add(1.0);
            return;
        }
        const int cell = cell_index(d.z[i], d.v[i]);
        const int s = 2 * u + d.t[i];
        const int dj = part.interval(yv);
        Kahan* a = acc + cell * stride;
        a[0].add(1.0);
        a[1 + s].add(1.0);
        a[1 + K + dj].add(1.0);
        a[1 + K + D + s * D + dj].add(1.0);
        a[1 + K + D + K * D + s * D + dj].add(yv);
    });
    if (out[static_cast<std::size_t>(nacc - 2)] > 0.0)
        raise(errc::non_finite_input, "outcome column contains non-finite values");
    if (out[static_cast<std::size_t>(nacc - 1)] > 0.0)
        raise(errc::schema_error,
              "proxy codes must lie in [0," + std::to_string(k_u) + ")");

    MixtureTables t;
    t.k = K;
    t.d = D;
    t.part = part;
    t.n = static_cast<std::int64_t>(n);
    for (int j = 0; j < kCells; ++j) {
        const double* a = out.data() + j * stride;
        const double cnt = a[0];
        if (cnt < 2.0)
            raise(errc::empty_cell, "cell (z=" + std::to_string(cell_z(j)) + ",v=" +
                                        std::to_string(cell_v(j)) + ") has fewer than 2 rows");
        t.counts[static_cast<std::size_t>(j)] = static_cast<std::int64_t>(std::llround(cnt));
        t.pr_cell[static_cast<std::size_t>(j)] = cnt / static_cast<double>(n);
        MixtureCellTable& tb = t.cell[static_cast<std::size_t>(j)];
        tb.pr_s.resize(static_cast<std::size_t>(K));
        tb.pr_y.resize(static_cast<std::size_t>(D));
        tb.joint.resize(static_cast<std::size_t>(K * D));
        tb.ymom.resize(static_cast<std::size_t>(K * D));
        // reciprocal-multiply, bit-for-bit the normalization of the moment kernels
        const double inv = 1.0 / cnt;
        for (int s = 0; s < K; ++s) tb.pr_s[static_cast<std::size_t>(s)] = a[1 + s] * inv;
        for (int dj = 0; dj < D; ++dj)
            tb.pr_y[static_cast<std::size_t>(dj)] = a[1 + K + dj] * inv;
        for (int s = 0; s < K * D; ++s) {
            tb.joint[static_cast<std::size_t>(s)] = a[1 + K + D + s] * inv;
            tb.ymom[static_cast<std::size_t>(s)] = a[1 + K + D + K * D + s] * inv;
        }
    }
    return t;
}

MixtureTables build_mixture_tables(const DgpSpecK& g, const Partition& part) {
    MixtureTables t;
    t.k = g.k();
    t.d = part.cells();
    t.part = part;
    t.cell = oracle_mixture_tables(g, part.cuts);
    for (int j = 0; j < kCells; ++j) {
        const int z = cell_z(j), v = cell_v(j);
        const double pv = v ? g.pr_v1 : 1.0 - g.pr_v1;
        const double pz = z ? g.pr_z_given_v[static_cast<std::size_t>(v)]
                            : 1.0 - g.pr_z_given_v[static_cast<std::size_t>(v)];
        t.pr_cell[static_cast<std::size_t>(j)] = pv * pz;
    }
    return t;
}

std::array<double, 2> pr_z_given_v_hat(const MixtureTables& t) {
    std::array<double, 2> w{};
    for (int v = 0; v < 2; ++v) {
        const double p0 = t.pr_cell[static_cast<std::size_t>(cell_index(0, v))];
        const double p1 = t.pr_cell[static_cast<std::size_t>(cell_index(1, v))];
        if (!(p0 + p1 > 0.0))
            raise(errc::empty_cell, "no observations at v=" + std::to_string(v));
        w[static_cast<std::size_t>(v)] = p1 / (p0 + p1);
    }
    return w;
}

QkSet build_qk(const MixtureTables& t) {
    if (t.d != t.k)
        raise(errc::partition_mismatch,
              "square identification needs exactly " + std::to_string(t.k) +
                  " intervals, the partition has " + std::to_string(t.d));
    const int K = t.k;
    QkSet q;
    q.rows = q.cols = K;
    for (int j = 0; j < kCells; ++j) {
        const MixtureCellTable& tb = t.cell[static_cast<std::size_t>(j)];
        for (int dj = 0; dj < t.d; ++dj)
            if (!(tb.pr_y[static_cast<std::size_t>(dj)] > 0.0))
                raise(errc::partition_mismatch,
                      "interval " + std::to_string(dj) + " receives zero mass in cell (z=" +
                          std::to_string(cell_z(j)) + ",v=" + std::to_string(cell_v(j)) + ")");
        std::vector<double>& m = q.q[static_cast<std::size_t>(j)];
        m.assign(static_cast<std::size_t>(K * K), 0.0);
        m[0] = 1.0;
        for (int c = 1; c < K; ++c) m[static_cast<std::size_t>(c)] = tb.pr_y[static_cast<std::size_t>(c - 1)];
        for (int r = 1; r < K; ++r) {
            m[static_cast<std::size_t>(r * K)] = tb.pr_s[static_cast<std::size_t>(r - 1)];
            for (int c = 1; c < K; ++c)
                m[static_cast<std::size_t>(r * K + c)] =
                    tb.joint[static_cast<std::size_t>((r - 1) * t.d + (c - 1))];
        }
    }
    return q;
}

QkSet build_q_delta(const MixtureTables& t) {
    const int K = t.k, D = t.d;
    QkSet q;
    q.rows = K;
    q.cols = D;
    for (int j = 0; j < kCells; ++j) {
        const MixtureCellTable& tb = t.cell[static_cast<std::size_t>(j)];
        std::vector<double>& m = q.q[static_cast<std::size_t>(j)];
        m.assign(static_cast<std::size_t>(K * D), 0.0);
        for (int c = 0; c < D; ++c) m[static_cast<std::size_t>(c)] = tb.pr_y[static_cast<std::size_t>(c)];
        for (int r = 1; r < K; ++r)
            for (int c = 0; c < D; ++c)
                m[static_cast<std::size_t>(r * D + c)] =
                    tb.joint[static_cast<std::size_t>((r - 1) * D + c)];
    }
    return q;
}

MixtureDecomposition identify_mixture(const QkSet& q, const Tolerances& tol) {
    if (q.rows != q.cols)
        raise(errc::invalid_spec, "identification needs square cell matrices (got " +
                                      std::to_string(q.rows) + "x" + std::to_string(q.cols) + ")");
    const int K = q.rows;
    if (K < 2 || K % 2 != 0)
        raise(errc::invalid_spec, "the state space has size 2*K_u; got " + std::to_string(K));
    if (K > 16) raise(errc::invalid_spec, "state spaces larger than 16 are not supported");

    std::array<EMat, kCells> Q;
    double worst_cond = 0.0;
    for (int j = 0; j < kCells; ++j) {
        Q[static_cast<std::size_t>(j)] = to_mat(q, j);
        if (!Q[static_cast<std::size_t>(j)].allFinite())
            raise(errc::non_finite_input, cell_name(j) + " has non-finite entries");
        const double cnd = cond_k(Q[static_cast<std::size_t>(j)]);
        if (!(cnd <= tol.max_cond))
            raise(errc::singular_q, cell_name(j) + " is numerically singular (cond " +
                                        std::to_string(cnd) + " > " +
                                        std::to_string(tol.max_cond) + ")");
        worst_cond = std::max(worst_cond, cnd);
    }

    // the four similarity transforms sharing the cross-ratio spectrum
    const EMat qt = mul_inv(Q[0] * Q[1].partialPivLu().solve(Q[3]), Q[2]);
    const EMat ry0 = mul_inv(Q[0].transpose() *
                                 Q[2].transpose().partialPivLu().solve(Q[3].transpose()),
                             Q[1].transpose());
    const EMat rt1 = mul_inv(Q[1] * Q[0].partialPivLu().solve(Q[2]), Q[3]);
    const EMat ry1 = mul_inv(Q[3].transpose() *
                                 Q[1].transpose().partialPivLu().solve(Q[0].transpose()),
                             Q[2].transpose());

    // anchor factor: eigencolumns of the treatment transform at z=0, labeled
    // by the assignment that maximizes the diagonal mass of the implied
    // emission matrix
    const EigK et0 = eig_k(qt, tol, "the z=0 treatment transform");
    std::vector<double> gain(static_cast<std::size_t>(K * K));
    for (int col = 0; col < K; ++col) {
        const Eigen::VectorXd e = full_emission_col(et0.vecs, col);
        for (int s = 0; s < K; ++s) gain[static_cast<std::size_t>(col * K + s)] = e(s);
    }
    const std::vector<int> pick = best_assignment(gain, K, nullptr);
    EMat lt0;
    std::vector<double> eigv;
    apply_labels(et0, pick, lt0, eigv);

    MixtureDecomposition dec;
    dec.k = K;
    dec.diag.eigenvalues = eigv;
    dec.diag.max_cond = worst_cond;
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j)
            gap = std::min(gap, std::fabs(eigv[static_cast<std::size_t>(i)] -
                                          eigv[static_cast<std::size_t>(j)]));
    dec.diag.eig_gap = gap;

    // emission matrices: columns close to 1 via the omitted observed state
    std::array<EMat, 2> A;
    A[0].resize(K, K);
    for (int s = 0; s < K; ++s) A[0].col(s) = full_emission_col(lt0, s);
    const double margin0 = dominance_margin_of(A[0]);
    if (!(margin0 > tol.label))
        raise(errc::no_dominant_labeling,
              "no state labeling makes the z=0 emission matrix strictly diagonally dominant; "
              "best column-to-state assignment " +
                  perm_string(pick) + " leaves margin " + std::to_string(margin0));

    // companion factors, labeled by eigenvalue matching
    std::vector<double> inv_eig(static_cast<std::size_t>(K));
    for (int s = 0; s < K; ++s)
        inv_eig[static_cast<std::size_t>(s)] = 1.0 / eigv[static_cast<std::size_t>(s)];
    const EMat ly0 = match_by_eigenvalue(eig_k(ry0, tol, "the v=0 outcome transform"), eigv,
                                         "the v=0 outcome factor");
    const EMat lt1 = match_by_eigenvalue(eig_k(rt1, tol, "the z=1 treatment transform"), inv_eig,
                                         "the z=1 treatment factor");
    const EMat ly1 = match_by_eigenvalue(eig_k(ry1, tol, "the v=1 outcome transform"), eigv,
                                         "the v=1 outcome factor");

    A[1].resize(K, K);
    for (int s = 0; s < K; ++s) A[1].col(s) = full_emission_col(lt1, s);
    const double margin1 = dominance_margin_of(A[1]);
    if (!(margin1 > tol.label))
        raise(errc::no_dominant_labeling,
              "the z=1 emission matrix implied by eigenvalue matching is not strictly "
              "diagonally dominant (margin " +
                  std::to_string(margin1) + ")");
    dec.diag.dominance_margin = std::min(margin0, margin1);
    dec.diag.l_y_cond = std::max(cond_k(ly0), cond_k(ly1));

    // latent state masses and the factorization residual
    const std::array<const EMat*, 2> lts{&lt0, &lt1};
    const std::array<const EMat*, 2> lys{&ly0, &ly1};
    std::array<Eigen::VectorXd, kCells> lam;
    double recon = 0.0;
    for (int j = 0; j < kCells; ++j) {
        const EMat& lt = *lts[static_cast<std::size_t>(cell_z(j))];
        const EMat& ly = *lys[static_cast<std::size_t>(cell_v(j))];
        const EMat mid = mul_inv(lt.partialPivLu().solve(Q[static_cast<std::size_t>(j)]),
                                 ly.transpose());
        lam[static_cast<std::size_t>(j)] = mid.diagonal();
        const EMat rec = lt * lam[static_cast<std::size_t>(j)].asDiagonal() * ly.transpose() -
                         Q[static_cast<std::size_t>(j)];
        const double qs = std::max(1.0, Q[static_cast<std::size_t>(j)].cwiseAbs().maxCoeff());
        recon = std::max(recon, rec.cwiseAbs().maxCoeff() / qs);
        const double mass = lam[static_cast<std::size_t>(j)].sum();
        if (std::fabs(mass - 1.0) > 1e-3)
            dec.diag.warnings.push_back("latent masses in cell (z=" + std::to_string(cell_z(j)) +
                                        ",v=" + std::to_string(cell_v(j)) + ") sum to " +
                                        std::to_string(mass));
    }
    dec.diag.recon_err = recon;

    // probability audit and packaging
    double margin = std::numeric_limits<double>::infinity();
    for (int z = 0; z < 2; ++z) {
        std::vector<double>& em = dec.emission[static_cast<std::size_t>(z)];
        em.resize(static_cast<std::size_t>(K * K));
        for (int i = 0; i < K; ++i)
            for (int s = 0; s < K; ++s) {
                double p = A[static_cast<std::size_t>(z)](i, s);
                margin = audit_prob(p, margin, tol,
                                    "Pr(S=" + std::to_string(i) + "|S*=" + std::to_string(s) +
                                        ",z=" + std::to_string(z) + ")");
                em[static_cast<std::size_t>(i * K + s)] = p;
            }
        std::vector<double>& lt = dec.l_t[static_cast<std::size_t>(z)];
        lt.assign(static_cast<std::size_t>(K * K), 1.0);
        for (int r = 1; r < K; ++r)
            for (int s = 0; s < K; ++s)
                lt[static_cast<std::size_t>(r * K + s)] = em[static_cast<std::size_t>((r - 1) * K + s)];
    }
    const std::array<const EMat*, 2> lysrc{&ly0, &ly1};
    for (int v = 0; v < 2; ++v) {
        std::vector<double>& ly = dec.l_y[static_cast<std::size_t>(v)];
        ly.assign(static_cast<std::size_t>(K * K), 1.0);
        for (int r = 1; r < K; ++r)
            for (int s = 0; s < K; ++s) {
                double p = (*lysrc[static_cast<std::size_t>(v)])(r, s);
                margin = audit_prob(p, margin, tol,
                                    "Pr(Y in interval " + std::to_string(r - 1) +
                                        "|S*=" + std::to_string(s) + ",v=" + std::to_string(v) + ")");
                ly[static_cast<std::size_t>(r * K + s)] = p;
            }
    }
    for (int j = 0; j < kCells; ++j) {
        std::vector<double>& lm = dec.lambda[static_cast<std::size_t>(j)];
        lm.resize(static_cast<std::size_t>(K));
        for (int s = 0; s < K; ++s) {
            double p = lam[static_cast<std::size_t>(j)](s);
            margin = audit_prob(p, margin, tol,
                                "Pr(S*=" + std::to_string(s) + "|z=" + std::to_string(cell_z(j)) +
                                    ",v=" + std::to_string(cell_v(j)) + ")");
            lm[static_cast<std::size_t>(s)] = p;
        }
    }
    dec.diag.min_prob_margin = margin;
    return dec;
}

HeteroAlphaBeta identify_alpha_beta_hetero(const MixtureDecomposition& mix,
                                           const std::array<double, 2>& pr_z_given_v,
                                           const MixtureTables& t, const Tolerances& tol) {
    const int K = mix.k, D = t.d;
    if (t.k != K)
        raise(errc::invalid_spec, "table state count " + std::to_string(t.k) +
                                      " does not match the decomposition (" + std::to_string(K) + ")");
    const int ku = K / 2;

    // E[Y 1{interval} | S*, v] by inverting the measurement mixing, one
    // instrument arm at a time, then pooled with the z weights
    std::array<EMat, 2> lt;
    for (int z = 0; z < 2; ++z) {
        lt[static_cast<std::size_t>(z)].resize(K, K);
        for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c) lt[static_cast<std::size_t>(z)](r, c) = mix.lt(z, r, c);
    }
    HeteroAlphaBeta out;
    out.k_u = ku;
    out.ey_sstar.assign(static_cast<std::size_t>(K * 2), 0.0);
    for (int v = 0; v < 2; ++v) {
        EMat pooled = EMat::Zero(K, D);
        for (int z = 0; z < 2; ++z) {
            const int cell = cell_index(z, v);
            const MixtureCellTable& tb = t.cell[static_cast<std::size_t>(cell)];
            EMat g(K, D);
            for (int dj = 0; dj < D; ++dj) {
                double total = 0.0;
                for (int s = 0; s < K; ++s) total += tb.ymom[static_cast<std::size_t>(s * D + dj)];
                g(0, dj) = total;
                for (int s = 0; s + 1 < K; ++s)
                    g(s + 1, dj) = tb.ymom[static_cast<std::size_t>(s * D + dj)];
            }
            EMat r = lt[static_cast<std::size_t>(z)].partialPivLu().solve(g);
            for (int s = 0; s < K; ++s) {
                const double mass = mix.lam(cell, s);
                if (!(mass > 1e-12))
                    raise(errc::invalid_probability,
                          "latent state " + std::to_string(s) + " has no mass in cell (z=" +
                              std::to_string(z) + ",v=" + std::to_string(v) + ")");
                r.row(s) /= mass;
            }
            const double w = z ? pr_z_given_v[static_cast<std::size_t>(v)]
                               : 1.0 - pr_z_given_v[static_cast<std::size_t>(v)];
            pooled += w * r;
        }
        for (int s = 0; s < K; ++s)
            out.ey_sstar[static_cast<std::size_t>(s * 2 + v)] = pooled.row(s).sum();
    }

    // per latent group: two instrument arms pin down the outcome line
    out.alpha.assign(static_cast<std::size_t>(ku * 2), 0.0);
    out.beta.assign(static_cast<std::size_t>(ku * 2), 0.0);
    for (int j = 0; j < kCells; ++j)
        out.pr_t1_u[static_cast<std::size_t>(j)].assign(static_cast<std::size_t>(ku), 0.0);
    for (int u = 0; u < ku; ++u)
        for (int v = 0; v < 2; ++v) {
            std::array<double, 2> p{}, ey{};
            for (int z = 0; z < 2; ++z) {
                const int cell = cell_index(z, v);
                const double m0 = mix.lam(cell, 2 * u), m1 = mix.lam(cell, 2 * u + 1);
                if (!(m0 + m1 > 1e-12))
                    raise(errc::invalid_probability,
                          "latent group U*=" + std::to_string(u) + " has no mass in cell (z=" +
                              std::to_string(z) + ",v=" + std::to_string(v) + ")");
                p[static_cast<std::size_t>(z)] = m1 / (m0 + m1);
                ey[static_cast<std::size_t>(z)] =
                    (m0 * out.ey_sstar[static_cast<std::size_t>(2 * u * 2 + v)] +
                     m1 * out.ey_sstar[static_cast<std::size_t>((2 * u + 1) * 2 + v)]) /
                    (m0 + m1);
                out.pr_t1_u[static_cast<std::size_t>(cell)][static_cast<std::size_t>(u)] =
                    p[static_cast<std::size_t>(z)];
            }
            const double gap = p[1] - p[0];
            if (std::fabs(gap) <= tol.rel_gap)
                raise(errc::irrelevant_instrument_at_u,
                      "the instrument does not move the latent treatment for U*=" +
                          std::to_string(u) + " at v=" + std::to_string(v) + " (gap " +
                          std::to_string(gap) + ")");
            out.beta[static_cast<std::size_t>(u * 2 + v)] = (ey[1] - ey[0]) / gap;
            out.alpha[static_cast<std::size_t>(u * 2 + v)] = (p[1] * ey[0] - p[0] * ey[1]) / gap;
        }
    return out;
}

OutcomeDist conditional_outcome_dist(const MixtureDecomposition& mix, const QkSet& q_delta,
                                     const Tolerances& tol) {
    const int K = mix.k, D = q_delta.cols;
    if (q_delta.rows != K)
        raise(errc::invalid_spec, "outcome stack has " + std::to_string(q_delta.rows) +
                                      " rows, the decomposition has " + std::to_string(K) +
                                      " states");
    std::array<EMat, 2> lt;
    for (int z = 0; z < 2; ++z) {
        lt[static_cast<std::size_t>(z)].resize(K, K);
        for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c) lt[static_cast<std::size_t>(z)](r, c) = mix.lt(z, r, c);
    }
    OutcomeDist out;
    out.k = K;
    out.d = D;
    for (int v = 0; v < 2; ++v) {
        std::array<EMat, 2> cand;
        for (int z = 0; z < 2; ++z) {
            const int cell = cell_index(z, v);
            cand[static_cast<std::size_t>(z)] =
                lt[static_cast<std::size_t>(z)].partialPivLu().solve(to_mat(q_delta, cell));
            for (int s = 0; s < K; ++s) {
                const double mass = mix.lam(cell, s);
                if (!(mass > 1e-12))
                    raise(errc::invalid_probability,
                          "latent state " + std::to_string(s) + " has no mass in cell (z=" +
                              std::to_string(z) + ",v=" + std::to_string(v) + ")");
                cand[static_cast<std::size_t>(z)].row(s) /= mass;
            }
        }
        const double err = (cand[0] - cand[1]).cwiseAbs().maxCoeff();
        out.cross_err = std::max(out.cross_err, err);
        if (err > tol.cross)
            raise(errc::cross_check_failed,
                  "the two instrument arms disagree about Pr(Y in interval | S*, v=" +
                      std::to_string(v) + ") by " + std::to_string(err));
        const EMat avg = 0.5 * (cand[0] + cand[1]);
        std::vector<double>& dst = out.dist[static_cast<std::size_t>(v)];
        dst.resize(static_cast<std::size_t>(K * D));
        for (int s = 0; s < K; ++s)
            for (int dj = 0; dj < D; ++dj)
                dst[static_cast<std::size_t>(s * D + dj)] = avg(s, dj);
    }
    return out;
}

MixturePipelineResult mixture_pipeline(const Dataset& d, int k_u, const Tolerances& tol) {
    if (k_u < 1 || k_u > 8)
        raise(errc::invalid_spec, "the latent group count must lie in [1,8]");
    const int K = 2 * k_u;

    auto try_levels = [&](const std::vector<double>& levels) {
        MixturePipelineResult r;
        r.part = build_partition_levels(d.y, levels);
        r.tables = build_mixture_tables(d, r.part, k_u);
        r.dec = identify_mixture(build_qk(r.tables), tol);
        return r;
    };

    std::vector<double> base(static_cast<std::size_t>(K - 1));
    for (int j = 1; j < K; ++j)
        base[static_cast<std::size_t>(j - 1)] = static_cast<double>(j) / K;

    constexpr double kCondCeiling = 1e6;
    MixturePipelineResult best;
    bool have = false;
    int trials = 0;
    std::exception_ptr first_err;
    auto attempt = [&](const std::vector<double>& levels) {
        ++trials;
        try {
            MixturePipelineResult r = try_levels(levels);
            if (!have || r.dec.diag.l_y_cond < best.dec.diag.l_y_cond) {
                best = std::move(r);
                have = true;
            }
        } catch (const error& e) {
            if (!errc_is_math(e.code())) throw;
            if (!first_err) first_err = std::current_exception();
        }
    };

    attempt(base);
    if (have && best.dec.diag.l_y_cond <= kCondCeiling) {
        best.partition_trials = trials;
        return best;
    }
    // the equal-probability partition is ill-conditioned or infeasible:
    // search a grid of shifted quantile levels for the best-conditioned one
    for (double delta : {-0.10, -0.08, -0.06, -0.04, -0.02, 0.02, 0.04, 0.06, 0.08, 0.10}) {
        std::vector<double> levels = base;
        bool ok = true;
        for (double& l : levels) {
            l += delta;
            if (l <= 0.005 || l >= 0.995) ok = false;
        }
        if (ok) attempt(levels);
    }
    if (!have) std::rethrow_exception(first_err);
    best.partition_searched = true;
    best.partition_trials = trials;
    return best;
}

}  // namespace miv
