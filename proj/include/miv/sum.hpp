#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace miv {

// Neumaier-compensated accumulator.
struct Kahan {
    double s = 0.0;
    double c = 0.0;

    void add(double x) {
        double t = s + x;
        if (std::abs(s) >= std::abs(x))
            c += (s - t) + x;
        else
            c += (x - t) + s;
        s = t;
    }

    double value() const { return s + c; }
};

// Plain compensated pass over [0, n).  Serial reference for the chunked
// kernel below; also the fallback inside nested parallel regions.
// fn(i, acc) adds element i's contribution into acc[0..nacc).
template <class Fn>
void reduce_serial(std::size_t n, int nacc, double* out, Fn&& fn) {
    std::vector<Kahan> acc(static_cast<std::size_t>(nacc));
    for (std::size_t i = 0; i < n; ++i) fn(i, acc.data());
    for (int a = 0; a < nacc; ++a) out[a] = acc[static_cast<std::size_t>(a)].value();
}

inline constexpr std::size_t kReduceChunk = 8192;

namespace detail {
bool use_parallel(std::size_t nchunks);
}

// Deterministic data-parallel reduction: the index range is cut into fixed
// 8192-element chunks, each chunk is accumulated with compensation, and the
// per-chunk partials are folded in chunk order.  Chunk boundaries do not
// depend on the thread count, so the result is byte-identical whether the
// chunks run on one thread or many.
template <class Fn>
void reduce_chunked(std::size_t n, int nacc, double* out, Fn&& fn) {
    const std::size_t na = static_cast<std::size_t>(nacc);
    const std::size_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    if (nchunks <= 1 || !detail::use_parallel(nchunks)) {
        std::vector<Kahan> acc(na);
        for (std::size_t ch = 0; ch < nchunks; ++ch) {
            std::size_t lo = ch * kReduceChunk;
            std::size_t hi = lo + kReduceChunk < n ? lo + kReduceChunk : n;
            std::vector<Kahan> local(na);
            for (std::size_t i = lo; i < hi; ++i) fn(i, local.data());
            for (std::size_t a = 0; a < na; ++a) acc[a].add(local[a].value());
        }
        for (std::size_t a = 0; a < na; ++a) out[a] = acc[a].value();
        return;
    }

    std::vector<double> partial(nchunks * na);
#pragma omp parallel for schedule(static)
    for (long long chs = 0; chs < static_cast<long long>(nchunks); ++chs) {
        std::size_t ch = static_cast<std::size_t>(chs);
        std::size_t lo = ch * kReduceChunk;
        std::size_t hi = lo + kReduceChunk < n ? lo + kReduceChunk : n;
        std::vector<Kahan> local(na);
        for (std::size_t i = lo; i < hi; ++i) fn(i, local.data());
        for (std::size_t a = 0; a < na; ++a) partial[ch * na + a] = local[a].value();
    }
    std::vector<Kahan> acc(na);
    for (std::size_t ch = 0; ch < nchunks; ++ch)
        for (std::size_t a = 0; a < na; ++a) acc[a].add(partial[ch * na + a]);
    for (std::size_t a = 0; a < na; ++a) out[a] = acc[a].value();
}

}  // namespace miv
