#include "miv/moments.hpp"

#include <cmath>
#include <limits>

#include "miv/errors.hpp"
#include "miv/sum.hpp"

namespace miv {

namespace {

constexpr double kGaussSqInt = 0.28209479177387814;  // int of squared N(0,1) density
constexpr double kEpanSqInt = 0.6;
constexpr double kGaussAtZero = 0.3989422804014327;
constexpr double kEpanAtZero = 0.75;

struct CellStats {
    std::array<double, kCells> cnt{}, sw{}, sy{}, st{}, syt{};
    double bad_y = 0;  // non-finite count among used rows
};

// first pass: per-cell weighted sums, weights w[i] (or all-1 when w null)
template <class Reduce>
CellStats first_pass(const Dataset& d, const double* w, const std::vector<uint8_t>* used,
                     Reduce&& reduce) {
    constexpr int na = kCells * 5 + 1;
    double out[na];
    reduce(d.size(), na, out, [&](std::size_t i, Kahan* a) {
        if (used && !(*used)[i]) return;
        const double y = d.y[i];
        if (!std::isfinite(y)) {
            a[kCells * 5].add(1.0);
            return;
        }
        const int j = cell_index(d.z[i], d.v[i]);
        Kahan* c = a + j * 5;
        c[0].add(1.0);
        const double wi = w ? w[i] : 1.0;
        if (wi == 0.0) return;
        c[1].add(wi);
        c[2].add(wi * y);
        c[3].add(wi * d.t[i]);
        c[4].add(wi * y * d.t[i]);
    });
    CellStats s;
    for (int j = 0; j < kCells; ++j) {
        s.cnt[static_cast<std::size_t>(j)] = out[j * 5 + 0];
        s.sw[static_cast<std::size_t>(j)] = out[j * 5 + 1];
        s.sy[static_cast<std::size_t>(j)] = out[j * 5 + 2];
        s.st[static_cast<std::size_t>(j)] = out[j * 5 + 3];
        s.syt[static_cast<std::size_t>(j)] = out[j * 5 + 4];
    }
    s.bad_y = out[kCells * 5];
    return s;
}

// second pass: weighted centered cross products, 6 per cell
template <class Reduce>
std::array<std::array<double, 6>, kCells> second_pass(const Dataset& d, const double* w,
                                                      const std::vector<uint8_t>* used,
                                                      const std::array<double, 12>& mean,
                                                      Reduce&& reduce) {
    constexpr int na = kCells * 6;
    double out[na];
    reduce(d.size(), na, out, [&](std::size_t i, Kahan* a) {
        if (used && !(*used)[i]) return;
        const double wi = w ? w[i] : 1.0;
        if (wi == 0.0) return;
        const double y = d.y[i];
        if (!std::isfinite(y)) return;
        const int j = cell_index(d.z[i], d.v[i]);
        const double dy = y - mean[static_cast<std::size_t>(3 * j)];
        const double dt = d.t[i] - mean[static_cast<std::size_t>(3 * j + 1)];
        const double dyt = y * d.t[i] - mean[static_cast<std::size_t>(3 * j + 2)];
        Kahan* c = a + j * 6;
        c[0].add(wi * dy * dy);
        c[1].add(wi * dy * dt);
        c[2].add(wi * dy * dyt);
        c[3].add(wi * dt * dt);
        c[4].add(wi * dt * dyt);
        c[5].add(wi * dyt * dyt);
    });
    std::array<std::array<double, 6>, kCells> s{};
    for (int j = 0; j < kCells; ++j)
        for (int k = 0; k < 6; ++k) s[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = out[j * 6 + k];
    return s;
}

void fill_block(std::array<double, 9>& b, const std::array<double, 6>& s, double scale) {
    b = {s[0] * scale, s[1] * scale, s[2] * scale,
         s[1] * scale, s[3] * scale, s[4] * scale,
         s[2] * scale, s[4] * scale, s[5] * scale};
}

void note_degenerate(MomentEstimate& e, int j, const std::array<double, 9>& b) {
    if (b[0] <= 0.0 || b[4] <= 0.0 || b[8] <= 0.0)
        e.warnings.push_back("degenerate variance in cell (z=" + std::to_string(cell_z(j)) +
                             ",v=" + std::to_string(cell_v(j)) + ")");
}

struct ChunkedPolicy {
    template <class Fn>
    void operator()(std::size_t n, int nacc, double* out, Fn&& fn) const {
        reduce_chunked(n, nacc, out, std::forward<Fn>(fn));
    }
};

struct SerialPolicy {
    template <class Fn>
    void operator()(std::size_t n, int nacc, double* out, Fn&& fn) const {
        reduce_serial(n, nacc, out, std::forward<Fn>(fn));
    }
};

template <class Reduce>
MomentEstimate discrete_impl(const Dataset& d, std::optional<double> x_code, Reduce reduce) {
    std::vector<uint8_t> used;
    const std::vector<uint8_t>* usedp = nullptr;
    if (x_code) {
        if (d.xdim() < 1)
            raise(errc::schema_error, "discrete covariate conditioning needs an x_1 column");
        used.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            used[i] = d.x_row(i)[0] == *x_code ? 1 : 0;
        usedp = &used;
    }

    auto s = first_pass(d, nullptr, usedp, reduce);
    if (s.bad_y > 0) raise(errc::non_finite_input, "outcome column contains non-finite values");

    MomentEstimate e;
    int64_t n = 0;
    for (int j = 0; j < kCells; ++j) {
        const auto cnt = static_cast<int64_t>(s.cnt[static_cast<std::size_t>(j)]);
        if (cnt < 2)
            raise(errc::empty_cell, "cell (z=" + std::to_string(cell_z(j)) + ",v=" +
                                        std::to_string(cell_v(j)) + ") has " + std::to_string(cnt) +
                                        " rows, need at least 2");
        e.m.counts[static_cast<std::size_t>(j)] = cnt;
        n += cnt;
        const double inv = 1.0 / s.cnt[static_cast<std::size_t>(j)];
        e.m.m[static_cast<std::size_t>(3 * j)] = s.sy[static_cast<std::size_t>(j)] * inv;
        e.m.m[static_cast<std::size_t>(3 * j + 1)] = s.st[static_cast<std::size_t>(j)] * inv;
        e.m.m[static_cast<std::size_t>(3 * j + 2)] = s.syt[static_cast<std::size_t>(j)] * inv;
    }
    e.m.n = n;
    e.m.rate = RateLabel::sqrt_n;
    e.m.a_n = std::sqrt(double(n));
    e.m.xdim = d.xdim();

    auto ss = second_pass(d, nullptr, usedp, e.m.m, reduce);
    for (int j = 0; j < kCells; ++j) {
        const double nj = s.cnt[static_cast<std::size_t>(j)];
        // unbiased Var[R | w_j], then scaled by n/n_j for the sqrt(n) rate
        const double scale = 1.0 / (nj - 1.0) * (double(n) / nj);
        fill_block(e.cov.block[static_cast<std::size_t>(j)], ss[static_cast<std::size_t>(j)], scale);
        note_degenerate(e, j, e.cov.block[static_cast<std::size_t>(j)]);
    }
    return e;
}

template <class Reduce>
MomentEstimate kernel_impl(const Dataset& d, const KernelConfig& cfg, Reduce reduce) {
    const int xd = d.xdim();
    if (xd < 1) raise(errc::schema_error, "kernel moments need covariate columns x_1..x_d");
    if (static_cast<int>(cfg.x.size()) != xd)
        raise(errc::schema_error, "query point dimension " + std::to_string(cfg.x.size()) +
                                      " does not match data dimension " + std::to_string(xd));
    if (!(cfg.h > 0.0) || !std::isfinite(cfg.h))
        raise(errc::bad_bandwidth, "bandwidth must be finite and positive");

    // kernel scaled to 1 at distance zero; normalization constants re-enter
    // in the density estimate below
    const bool gauss = cfg.kernel == KernelKind::gaussian;
    std::vector<double> w(d.size());
    double bad[1];
    reduce(d.size(), 1, bad, [&](std::size_t i, Kahan* a) {
        const double* xi = d.x_row(i);
        double acc = 0.0, prod = 1.0;
        bool finite = true;
        for (int k = 0; k < xd; ++k) {
            const double u = (xi[k] - cfg.x[static_cast<std::size_t>(k)]) / cfg.h;
            if (!std::isfinite(u)) finite = false;
            if (gauss)
                acc += u * u;
            else
                prod *= std::max(0.0, 1.0 - u * u);
        }
        if (!finite) {
            a[0].add(1.0);
            w[i] = 0.0;
            return;
        }
        w[i] = gauss ? std::exp(-0.5 * acc) : prod;
    });
    if (bad[0] > 0) raise(errc::non_finite_input, "covariate columns contain non-finite values");

    auto s = first_pass(d, w.data(), nullptr, reduce);
    if (s.bad_y > 0) raise(errc::non_finite_input, "outcome column contains non-finite values");

    MomentEstimate e;
    int64_t n = 0;
    for (int j = 0; j < kCells; ++j) {
        const auto cnt = static_cast<int64_t>(s.cnt[static_cast<std::size_t>(j)]);
        if (cnt < 2)
            raise(errc::empty_cell, "cell (z=" + std::to_string(cell_z(j)) + ",v=" +
                                        std::to_string(cell_v(j)) + ") has " + std::to_string(cnt) +
                                        " rows, need at least 2");
        n += cnt;
        e.m.counts[static_cast<std::size_t>(j)] = cnt;
    }
    for (int j = 0; j < kCells; ++j) {
        const double swj = s.sw[static_cast<std::size_t>(j)];
        // documented underflow threshold: average weight below machine epsilon
        if (!(swj > s.cnt[static_cast<std::size_t>(j)] * std::numeric_limits<double>::epsilon()))
            raise(errc::zero_kernel_mass, "kernel mass underflow in cell (z=" +
                                              std::to_string(cell_z(j)) + ",v=" + std::to_string(cell_v(j)) +
                                              "); query point too far from the data");
        const double inv = 1.0 / swj;
        e.m.m[static_cast<std::size_t>(3 * j)] = s.sy[static_cast<std::size_t>(j)] * inv;
        e.m.m[static_cast<std::size_t>(3 * j + 1)] = s.st[static_cast<std::size_t>(j)] * inv;
        e.m.m[static_cast<std::size_t>(3 * j + 2)] = s.syt[static_cast<std::size_t>(j)] * inv;
    }
    const double hd = std::pow(cfg.h, xd);
    e.m.n = n;
    e.m.rate = RateLabel::sqrt_nh;
    e.m.h = cfg.h;
    e.m.a_n = std::sqrt(double(n) * hd);
    e.m.xdim = xd;

    auto ss = second_pass(d, w.data(), nullptr, e.m.m, reduce);
    const double c0 = gauss ? kGaussAtZero : kEpanAtZero;
    const double rk = gauss ? kGaussSqInt : kEpanSqInt;
    for (int j = 0; j < kCells; ++j) {
        const double nj = s.cnt[static_cast<std::size_t>(j)];
        const double swj = s.sw[static_cast<std::size_t>(j)];
        // f_hat(x | w_j) with the normalization constants restored
        const double fx = std::pow(c0 / cfg.h, xd) * swj / nj;
        const double pj = nj / double(n);
        const double scale = (1.0 / swj) * std::pow(rk, xd) / (fx * pj);
        fill_block(e.cov.block[static_cast<std::size_t>(j)], ss[static_cast<std::size_t>(j)], scale);
        note_degenerate(e, j, e.cov.block[static_cast<std::size_t>(j)]);
    }
    return e;
}

}  // namespace

MomentEstimate estimate_moments_discrete(const Dataset& d, std::optional<double> x_code) {
    return discrete_impl(d, x_code, ChunkedPolicy{});
}

MomentEstimate estimate_moments_discrete_ref(const Dataset& d, std::optional<double> x_code) {
    return discrete_impl(d, x_code, SerialPolicy{});
}

MomentEstimate estimate_moments_kernel(const Dataset& d, const KernelConfig& cfg) {
    return kernel_impl(d, cfg, ChunkedPolicy{});
}

MomentEstimate estimate_moments_kernel_ref(const Dataset& d, const KernelConfig& cfg) {
    return kernel_impl(d, cfg, SerialPolicy{});
}

double bandwidth_rule_of_thumb(const Dataset& d) {
    const int xd = d.xdim();
    if (xd < 1) raise(errc::schema_error, "bandwidth rule needs covariate columns");
    const std::size_t n = d.size();
    if (n < 2) raise(errc::degenerate_x, "bandwidth rule needs at least 2 observations");

    double geo = 0.0;
    for (int k = 0; k < xd; ++k) {
        double stats[2];
        reduce_chunked(n, 2, stats, [&](std::size_t i, Kahan* a) {
            const double xv = d.x_row(i)[k];
            a[0].add(xv);
            a[1].add(xv * xv);
        });
        const double mean = stats[0] / double(n);
        const double var = (stats[1] - double(n) * mean * mean) / (double(n) - 1.0);
        if (!(var > 0.0) || !std::isfinite(var))
            raise(errc::degenerate_x, "covariate x_" + std::to_string(k + 1) + " has zero variance");
        geo += 0.5 * std::log(var);
    }
    geo = std::exp(geo / xd);
    return 1.06 * geo * std::pow(double(n), -1.0 / (4.0 + xd));
}

}  // namespace miv
