#include "miv/rng.hpp"

#include <cmath>

namespace miv {

namespace {

constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<uint32_t, 4>& c, const std::array<uint32_t, 2>& k) {
    uint64_t p0 = uint64_t(kMul0) * c[0];
    uint64_t p1 = uint64_t(kMul1) * c[2];
    uint32_t hi0 = uint32_t(p0 >> 32), lo0 = uint32_t(p0);
    uint32_t hi1 = uint32_t(p1 >> 32), lo1 = uint32_t(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline double to_unit(uint32_t lo, uint32_t hi) {
    uint64_t bits = (uint64_t(hi) << 32) | lo;
    return double((bits >> 11) + 0.5) * 0x1p-53;
}

}  // namespace

std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                   std::array<uint32_t, 2> key) {
    for (int r = 0; r < 10; ++r) {
        if (r) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        round_once(ctr, key);
    }
    return ctr;
}

CounterRng::CounterRng(uint64_t seed, uint64_t stream)
    : key_{uint32_t(seed), uint32_t(seed >> 32)}, stream_(uint32_t(stream)) {}

std::pair<double, double> CounterRng::uniform2(uint64_t i, uint32_t slot) const {
    auto w = philox4x32({uint32_t(i), uint32_t(i >> 32), slot, stream_}, key_);
    return {to_unit(w[0], w[1]), to_unit(w[2], w[3])};
}

double CounterRng::uniform(uint64_t i, uint32_t slot) const {
    return uniform2(i, slot).first;
}

double CounterRng::normal(uint64_t i, uint32_t slot) const {
    auto [u1, u2] = uniform2(i, slot);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

}  // namespace miv
