#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "miv/identk.hpp"
#include "miv/tolerances.hpp"

namespace miv {

// Wald ratio across the instrument arms: (E[Y|z=1,v] - E[Y|z=0,v]) divided
// by the shift it induces in the latent treatment.  Raises ZeroDenominator
// when the instrument leaves Pr(T*=1|v) unmoved.
double late(const std::array<double, 2>& e_y_by_z, const std::array<double, 2>& e_tstar_by_z);

// V-pooled summary: ATE by Pr(V=v), TT/TUT by the treated/untreated shares
// within each covariate level, LATE by pooling both Wald numerators and
// denominators.
struct EffectsAggregate {
    double late = 0, ate = 0, tt = 0, tut = 0;
    double pr_t1 = 0;  // Pr(T* = 1)
};

// Weighted averages of beta(u,v) over the identified latent-group masses,
// one column per covariate level, plus the weights themselves so a report
// shows what was averaged.
struct EffectsReport {
    int k_u = 0;
    std::array<double, 2> late{}, ate{}, tt{}, tut{};
    std::array<double, 2> pr_t1{};  // Pr(T*=1 | v), z marginalized out
    std::vector<double> pr_u_v;     // k_u x 2: Pr(U*=u | v), index u*2+v
    std::vector<double> pr_u_t1;    // k_u x 2: Pr(U*=u | T*=1, v)
    std::vector<double> pr_u_t0;    // k_u x 2: Pr(U*=u | T*=0, v)
    std::vector<double> beta;       // the coefficients the averages weight
    std::optional<EffectsAggregate> pooled;  // present when pr_v1 was supplied
    std::string route;                       // which identification produced the inputs
};

// Treatment effects from an identified decomposition.  Marginalizes the
// latent-state masses over the instrument with the observed Pr(Z=1|v),
// conditions on T* by Bayes, and averages beta(u,v) under each weighting.
// Passing the sample share Pr(V=1) additionally fills the pooled summary.
EffectsReport ate_tt_tut(const MixtureDecomposition& mix, const HeteroAlphaBeta& ab,
                         const std::array<double, 2>& pr_z_given_v,
                         std::optional<double> pr_v1 = {});

}  // namespace miv
