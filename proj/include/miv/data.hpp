#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace miv {

// Canonical instrument/covariate cell order used everywhere a quantity is
// indexed by (Z, V): w1=(0,0), w2=(1,0), w3=(0,1), w4=(1,1).
inline constexpr int kCells = 4;

constexpr int cell_index(int z, int v) { return z + 2 * v; }
constexpr int cell_z(int j) { return j & 1; }
constexpr int cell_v(int j) { return j >> 1; }

struct Observation {
    double y = 0.0;
    uint8_t t = 0;
    uint8_t z = 0;
    uint8_t v = 0;
    std::vector<double> x;  // optional continuous covariates
    int32_t u = -1;         // optional discrete group, -1 when absent
};

// Column-oriented sample.  Rows are observations; the moment kernels iterate
// columns.  Latent columns are side channels written by the simulator and
// ignored by every estimator.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(int xdim) : xdim_(xdim) {}

    std::size_t size() const { return y.size(); }
    int xdim() const { return xdim_; }
    bool has_u() const { return !u.empty(); }
    bool has_latent() const { return !latent_tstar.empty(); }

    void reserve(std::size_t n);
    void resize(std::size_t n);
    void push_back(const Observation& o);
    Observation row(std::size_t i) const;

    const double* x_row(std::size_t i) const { return x.data() + i * static_cast<std::size_t>(xdim_); }
    double* x_row(std::size_t i) { return x.data() + i * static_cast<std::size_t>(xdim_); }

    std::vector<double> y;
    std::vector<uint8_t> t, z, v;
    std::vector<double> x;  // row-major, size() * xdim()
    std::vector<int32_t> u;
    std::vector<uint8_t> latent_tstar;
    std::vector<int32_t> latent_ustar;

private:
    int xdim_ = 0;
};

}  // namespace miv
