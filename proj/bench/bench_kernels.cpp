// Timing harness for the cell-moment kernels: the chunked, OpenMP-threaded
// production paths against the plain-loop references, on the discrete and
// kernel-localized weightings.  The worst disagreement between the two is
// printed next to every timing, so a speedup never hides a divergence.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "miv/dgp.hpp"
#include "miv/moments.hpp"

using namespace miv;

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double best_of(int runs, F&& f) {
    double best = 1e300;
    for (int r = 0; r < runs; ++r) {
        const auto t0 = Clock::now();
        f();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const MomentEstimate& a, const MomentEstimate& b) {
    double m = 0;
    for (int i = 0; i < 12; ++i) m = std::max(m, std::fabs(a.m.m[i] - b.m.m[i]));
    for (int c = 0; c < kCells; ++c)
        for (int k = 0; k < 9; ++k)
            m = std::max(m, std::fabs(a.cov.block[c][k] - b.cov.block[c][k]));
    return m;
}

DgpSpec2 world() {
    DgpSpec2 g;
    g.p_tstar = {0.2, 0.6, 0.4, 0.9};
    g.miscls = {{{0.1, 0.8}, {0.2, 0.9}}};
    g.alpha = {1.0, 1.5};
    g.beta = {2.0, 1.0};
    g.with_x = true;
    g.alpha_x = 1.0;
    return g;
}

void report(const char* label, std::size_t n, double prod, double ref, double diff) {
    std::printf("%-10s n=%9zu   prod %8.3f ms   ref %8.3f ms   speedup %5.2fx   |diff| %g\n",
                label, n, prod * 1e3, ref * 1e3, ref / prod, diff);
}

}  // namespace

int main(int argc, char** argv) {
    const int runs = argc > 1 ? std::atoi(argv[1]) : 5;
    const std::size_t sizes[] = {100'000, 1'000'000, 4'000'000};
    const DgpSpec2 g = world();

    for (const std::size_t n : sizes) {
        const Dataset d = simulate(g, n, 7, 0, false);

        MomentEstimate prod, ref;
        const double t_prod = best_of(runs, [&] { prod = estimate_moments_discrete(d); });
        const double t_ref = best_of(runs, [&] { ref = estimate_moments_discrete_ref(d); });
        report("discrete", n, t_prod, t_ref, max_abs_diff(prod, ref));

        KernelConfig kc;
        kc.x = {0.5};
        kc.h = bandwidth_rule_of_thumb(d);
        const double k_prod = best_of(runs, [&] { prod = estimate_moments_kernel(d, kc); });
        const double k_ref = best_of(runs, [&] { ref = estimate_moments_kernel_ref(d, kc); });
        report("kernel", n, k_prod, k_ref, max_abs_diff(prod, ref));
    }
    return 0;
}
