#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace miv {

// Philox4x32-10 block cipher (Salmon, Moraes, Dror, Shaw 2011).  Counter-based:
// every draw is a pure function of (key, counter), so simulation output is
// byte-identical for any thread count, chunking, or evaluation order.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                   std::array<uint32_t, 2> key);

// Stateless stream view keyed by (seed, stream).  `stream` separates Monte
// Carlo replications; values must stay below 2^32.  Each (i, slot) pair
// addresses an independent 128-bit block.
class CounterRng {
public:
    CounterRng(uint64_t seed, uint64_t stream);

    // two iid U(0,1) from one block; never returns 0 or 1
    std::pair<double, double> uniform2(uint64_t i, uint32_t slot) const;

    double uniform(uint64_t i, uint32_t slot) const;

    // standard normal via Box-Muller on one block
    double normal(uint64_t i, uint32_t slot) const;

private:
    std::array<uint32_t, 2> key_;
    uint32_t stream_;
};

}  // namespace miv
