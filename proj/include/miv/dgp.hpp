#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "miv/data.hpp"

namespace miv {

// Binary-regressor world: T* in {0,1}, outcome Y = alpha(V) + alpha_x*X
// + beta(V)*T* + eps, observed T misclassified given (T*, Z).
struct DgpSpec2 {
    std::array<double, kCells> p_tstar{};             // Pr(T*=1 | z,v), canonical cells
    std::array<std::array<double, 2>, 2> miscls{};    // miscls[z][tstar] = Pr(T=1 | T*, z)
    std::array<double, 2> alpha{};                    // level by v
    std::array<double, 2> beta{};                     // treatment effect by v
    std::array<std::array<double, 2>, 2> eps_offset{{{0, 0}, {0, 0}}};  // E[eps | T*, v]
    double sigma = 1.0;
    std::array<double, 2> pr_z_given_v{0.5, 0.5};     // Pr(Z=1 | v)
    double pr_v1 = 0.5;
    bool with_x = false;                              // adds X ~ U(0,1)
    double alpha_x = 0.0;                             // slope on X in the outcome level
};

// Mixture world: latent S* = (U*, T*) with K = 2*k_u states (U* major, T*
// minor), observed S = (U, T) drawn from a Z-specific emission table.
struct DgpSpecK {
    int k_u = 2;
    std::vector<double> lam;        // kCells x K: Pr(S*=s | z,v), row = cell
    std::array<std::vector<double>, 2> emit;  // per z: K x K column-stochastic, emit[z][i*K+j] = Pr(S=s_i | S*=s_j)
    std::vector<double> alpha;      // k_u x 2: alpha[u*2+v]
    std::vector<double> beta;       // k_u x 2
    double sigma = 1.0;
    std::array<double, 2> pr_z_given_v{0.5, 0.5};
    double pr_v1 = 0.5;

    int k() const { return 2 * k_u; }
};

void validate(const DgpSpec2& g);  // throws invalid_spec
void validate(const DgpSpecK& g);

struct CellMoments {
    double ey = 0, et = 0, eyt = 0;
};

// Population moments by exhaustive enumeration of the latent states.  This
// is the reference everything else is tested against; it deliberately shares
// no matrix code with the identification modules.
std::array<CellMoments, kCells> oracle_moments(const DgpSpec2& g);
std::array<CellMoments, kCells> oracle_moments_at_x(const DgpSpec2& g, double x);

// Var[(Y,T,YT) | cell] as 3x3 row-major blocks; marginal over X or at X=x.
std::array<std::array<double, 9>, kCells> oracle_moment_cov(const DgpSpec2& g);
std::array<std::array<double, 9>, kCells> oracle_moment_cov_at_x(const DgpSpec2& g, double x);

std::array<double, kCells> oracle_cell_pr(const DgpSpec2& g);  // Pr(W = w_j)

// Canonical 12-vectors of the estimation module: phi stacks E[Y|T*,v],
// Pr(T*=1|cell), Pr(T=1|T*,z); theta replaces the four outcome slots with
// alpha(v), beta(v).  Values are the pseudo-true ones (offsets folded in,
// X marginalized).
std::array<double, 12> oracle_phi(const DgpSpec2& g);
std::array<double, 12> oracle_theta(const DgpSpec2& g);

Dataset simulate(const DgpSpec2& g, std::size_t n, uint64_t seed,
                 uint64_t stream = 0, bool latent = true);
Dataset simulate(const DgpSpecK& g, std::size_t n, uint64_t seed,
                 uint64_t stream = 0, bool latent = true);

// ---- mixture-side population tables ----

// Probability and partial-expectation tables for one (z,v) cell given a
// partition of the outcome axis into D = cuts.size()+1 intervals.
struct MixtureCellTable {
    std::vector<double> pr_s;   // K: Pr(S = s_i | z,v)
    std::vector<double> pr_y;   // D: Pr(Y in interval j | z,v)
    std::vector<double> joint;  // K x D: Pr(Y in j, S = s_i | z,v)
    std::vector<double> ymom;   // K x D: E[Y 1{Y in j} 1{S = s_i} | z,v]
};

std::array<MixtureCellTable, kCells> oracle_mixture_tables(const DgpSpecK& g,
                                                           const std::vector<double>& cuts);

double oracle_y_cdf(const DgpSpecK& g, double yv);
std::vector<double> oracle_partition(const DgpSpecK& g, int ncells);  // population quantile cuts

double oracle_pr_sstar(const DgpSpecK& g, int cell, int s);           // Pr(S*=s | z,v)
double oracle_mean_y_sstar(const DgpSpecK& g, int s, int v);          // E[Y | S*=s, v]

struct EffectsTruth {
    std::array<double, 2> ate{}, tt{}, tut{}, late{};
};
EffectsTruth oracle_effects(const DgpSpecK& g);

// Direct potential-outcome simulation: draws (V,Z,S*,eps), evaluates both
// arms of the outcome equation, and averages.  Used to cross-validate the
// identification-based effect formulas.
struct PoSimResult {
    std::array<double, 2> ate{}, tt{}, tut{};
    std::array<double, 2> se_ate{}, se_tt{}, se_tut{};
};
PoSimResult po_oracle_sim(const DgpSpecK& g, std::size_t n, uint64_t seed);

// ---- assumption audit ----

struct AssumptionCheck {
    std::string id;      // short tag, e.g. "relevance_z"
    std::string what;    // human description
    bool holds = false;
    double margin = 0;   // distance from the failure boundary
    std::string detail;
};

std::vector<AssumptionCheck> verify_assumptions(const DgpSpec2& g);
std::vector<AssumptionCheck> verify_assumptions(const DgpSpecK& g,
                                                const std::vector<double>& cuts);

}  // namespace miv
