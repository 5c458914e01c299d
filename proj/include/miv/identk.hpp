#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "miv/data.hpp"
#include "miv/dgp.hpp"
#include "miv/tolerances.hpp"

namespace miv {

// Partition of the outcome axis into cells.size()+1 half-open intervals
// (-inf, c_1], (c_1, c_2], ..., (c_{D-1}, +inf).  Cut points are strictly
// increasing.
struct Partition {
    std::vector<double> cuts;

    int cells() const { return static_cast<int>(cuts.size()) + 1; }
    int interval(double yv) const;  // index of the interval containing yv
};

// Cut points at the requested empirical quantile levels (linear
// interpolation between order statistics, the common "type 7" definition).
// Coinciding cuts are nudged apart by the smallest representable amount.
Partition build_partition_levels(const std::vector<double>& y_sample,
                                 const std::vector<double>& levels);

// Equal-probability partition into ncells intervals: levels j/ncells.
Partition build_partition(const std::vector<double>& y_sample, int ncells);

// Sample analogue of the oracle mixture tables: per (z,v) cell the marginal
// distribution of the proxy state S = 2U + T, the interval distribution of
// Y, their joint, and the interval-truncated first moments of Y.
struct MixtureTables {
    int k = 0;  // number of S codes = 2 * k_u
    int d = 0;  // number of partition intervals
    Partition part;
    std::array<MixtureCellTable, kCells> cell{};
    std::array<std::int64_t, kCells> counts{};
    std::int64_t n = 0;
    std::array<double, kCells> pr_cell{};
};

MixtureTables build_mixture_tables(const Dataset& d, const Partition& part, int k_u);
MixtureTables build_mixture_tables(const DgpSpecK& g, const Partition& part);  // oracle-exact

// Sample share of Z=1 within each covariate level, for weighting the two
// instrument arms when they estimate the same object.
std::array<double, 2> pr_z_given_v_hat(const MixtureTables& t);

// Stacked cell matrices.  The square identification form is K x K with
// corner 1, first row Pr(Y in interval j | z,v) for the first K-1 intervals,
// first column Pr(S = s_i | z,v) for the first K-1 states, and joint
// probabilities inside.  The rectangular form keeps all D interval columns
// (marginal row on top, joint rows for the first K-1 states below) and is
// what the outcome-distribution recovery consumes.
struct QkSet {
    int rows = 0, cols = 0;
    std::array<std::vector<double>, kCells> q{};

    double at(int cell, int r, int c) const {
        return q[static_cast<std::size_t>(cell)][static_cast<std::size_t>(r * cols + c)];
    }
};

QkSet build_qk(const MixtureTables& t);       // square, needs d == k
QkSet build_q_delta(const MixtureTables& t);  // rectangular K x D, any partition

struct MixDiagnostics {
    std::vector<double> eigenvalues;  // cross-ratio spectrum in state order
    double eig_gap = 0;               // min pairwise spacing of that spectrum
    double dominance_margin = 0;      // worst diagonal lead of the emission columns
    double min_prob_margin = 0;       // closest recovered probability to {0,1}
    double max_cond = 0;              // worst condition number among the cell matrices
    double l_y_cond = 0;              // worst condition number of the outcome factors
    double recon_err = 0;             // max relative factorization residual
    std::vector<std::string> warnings;
};

// Recovered factorization Q(z,v) = L_T(z) Lambda(z,v) L_Y(v)'.  Columns are
// labeled by the latent state s = 2u + t; all matrices are row-major K x K.
// emission[z] is the full column-stochastic Pr(S = s_i | S* = s_j, z);
// l_t[z] is its first K-1 rows under a row of ones, l_y[v] likewise holds
// Pr(Y in interval i | S* = s_j, v) for the first K-1 intervals.
struct MixtureDecomposition {
    int k = 0;
    std::array<std::vector<double>, 2> l_t{};
    std::array<std::vector<double>, 2> l_y{};
    std::array<std::vector<double>, 2> emission{};
    std::array<std::vector<double>, kCells> lambda{};
    MixDiagnostics diag;

    int k_u() const { return k / 2; }
    double lt(int z, int r, int c) const {
        return l_t[static_cast<std::size_t>(z)][static_cast<std::size_t>(r * k + c)];
    }
    double ly(int v, int r, int c) const {
        return l_y[static_cast<std::size_t>(v)][static_cast<std::size_t>(r * k + c)];
    }
    double emit(int z, int r, int c) const {
        return emission[static_cast<std::size_t>(z)][static_cast<std::size_t>(r * k + c)];
    }
    double lam(int cell, int s) const {
        return lambda[static_cast<std::size_t>(cell)][static_cast<std::size_t>(s)];
    }
};

// Eigendecomposition identification of the K-state measurement system.
// Diagonalizes Q(0,0)Q(1,0)^{-1}Q(1,1)Q(0,1)^{-1}, labels the eigenvector
// columns by the assignment that maximizes the diagonal mass of the implied
// emission matrix (which must come out strictly diagonally dominant), and
// carries the labels to the companion factors by eigenvalue matching.
MixtureDecomposition identify_mixture(const QkSet& q, const Tolerances& tol = {});

// Treatment model coefficients by latent group: for each (u,v) the two
// instrument arms give E[Y|U*=u,V=v,Z=z] = alpha(u,v) + beta(u,v) *
// Pr(T*=1|U*=u,V=v,Z=z), a 2x2 linear system.
struct HeteroAlphaBeta {
    int k_u = 0;
    std::vector<double> alpha;   // k_u x 2, index u*2+v
    std::vector<double> beta;    // k_u x 2
    std::vector<double> ey_sstar;  // k x 2: E[Y | S*=s, v], index s*2+v
    std::array<std::vector<double>, kCells> pr_t1_u{};  // per cell: Pr(T*=1|U*=u,z,v)
};

HeteroAlphaBeta identify_alpha_beta_hetero(const MixtureDecomposition& mix,
                                           const std::array<double, 2>& pr_z_given_v,
                                           const MixtureTables& t, const Tolerances& tol = {});

// Outcome distribution over an arbitrary partition: Pr(Y in Delta_j | S*, V)
// as a K x D matrix per covariate level, recovered separately from each
// instrument arm and averaged; the two arms must agree within tol.cross.
struct OutcomeDist {
    int k = 0, d = 0;
    std::array<std::vector<double>, 2> dist{};  // by v, row-major K x D
    double cross_err = 0;

    double at(int v, int s, int j) const {
        return dist[static_cast<std::size_t>(v)][static_cast<std::size_t>(s * d + j)];
    }
};

OutcomeDist conditional_outcome_dist(const MixtureDecomposition& mix, const QkSet& q_delta,
                                     const Tolerances& tol = {});

// Quantile partition, tables, and decomposition in one step.  If the
// equal-probability partition leaves the outcome factor ill-conditioned
// (cond > 1e6), a grid of shifted quantile levels is searched and the
// best-conditioned feasible partition wins.
struct MixturePipelineResult {
    Partition part;
    MixtureTables tables;
    MixtureDecomposition dec;
    bool partition_searched = false;
    int partition_trials = 1;
};

MixturePipelineResult mixture_pipeline(const Dataset& d, int k_u, const Tolerances& tol = {});

}  // namespace miv
