#include "miv/data.hpp"

namespace miv {

void Dataset::reserve(std::size_t n) {
    y.reserve(n);
    t.reserve(n);
    z.reserve(n);
    v.reserve(n);
    if (xdim_ > 0) x.reserve(n * static_cast<std::size_t>(xdim_));
}

void Dataset::resize(std::size_t n) {
    y.resize(n);
    t.resize(n);
    z.resize(n);
    v.resize(n);
    if (xdim_ > 0) x.resize(n * static_cast<std::size_t>(xdim_));
    if (!u.empty()) u.resize(n);
    if (!latent_tstar.empty()) latent_tstar.resize(n);
    if (!latent_ustar.empty()) latent_ustar.resize(n);
}

void Dataset::push_back(const Observation& o) {
    y.push_back(o.y);
    t.push_back(o.t);
    z.push_back(o.z);
    v.push_back(o.v);
    if (xdim_ > 0) {
        for (int d = 0; d < xdim_; ++d)
            x.push_back(d < static_cast<int>(o.x.size()) ? o.x[static_cast<std::size_t>(d)] : 0.0);
    }
    if (o.u >= 0 || !u.empty()) {
        if (u.empty() && size() > 1) u.assign(size() - 1, -1);
        u.push_back(o.u);
    }
}

Observation Dataset::row(std::size_t i) const {
    Observation o;
    o.y = y[i];
    o.t = t[i];
    o.z = z[i];
    o.v = v[i];
    if (xdim_ > 0) o.x.assign(x_row(i), x_row(i) + xdim_);
    if (!u.empty()) o.u = u[i];
    return o;
}

}  // namespace miv
