#include "miv/json_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <utility>

#include "miv/errors.hpp"

namespace miv {

namespace {

[[noreturn]] void bad(const std::string& what) { raise(errc::schema_error, what); }

const Json& need(const Json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) bad(std::string("missing field '") + key + "'");
    return *it;
}

template <typename T>
T field(const Json& j, const char* key) {
    try {
        return need(j, key).get<T>();
    } catch (const Json::exception& e) {
        bad(std::string("field '") + key + "': " + e.what());
    }
}

template <typename T>
T field_or(const Json& j, const char* key, T def) {
    const auto it = j.find(key);
    if (it == j.end()) return def;
    try {
        return it->get<T>();
    } catch (const Json::exception& e) {
        bad(std::string("field '") + key + "': " + e.what());
    }
}

Json rows_json(const std::vector<double>& flat, int nr, int nc) {
    Json out = Json::array();
    for (int r = 0; r < nr; ++r) {
        Json row = Json::array();
        for (int c = 0; c < nc; ++c) row.push_back(flat[static_cast<std::size_t>(r * nc + c)]);
        out.push_back(std::move(row));
    }
    return out;
}

Json mat12_rows(const Mat12& m) {
    Json out = Json::array();
    for (int r = 0; r < 12; ++r) {
        Json row = Json::array();
        for (int c = 0; c < 12; ++c) row.push_back(m[static_cast<std::size_t>(12 * r + c)]);
        out.push_back(std::move(row));
    }
    return out;
}

// nested rows -> flat row-major, with shape checking
std::vector<double> grid_flat(const Json& arr, const std::string& what, int nr, int nc) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != nr)
        bad("field '" + what + "': expected " + std::to_string(nr) + " rows");
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(nr) * static_cast<std::size_t>(nc));
    for (const Json& row : arr) {
        if (!row.is_array() || static_cast<int>(row.size()) != nc)
            bad("field '" + what + "': expected rows of length " + std::to_string(nc));
        for (const Json& x : row) {
            if (!x.is_number()) bad("field '" + what + "': non-numeric entry");
            flat.push_back(x.get<double>());
        }
    }
    return flat;
}

std::vector<double> rows_flat(const Json& j, const char* key, int nr, int nc) {
    return grid_flat(need(j, key), key, nr, nc);
}

Json mat2_json(const Mat2& m) {
    return Json::array({Json::array({m.a, m.b}), Json::array({m.c, m.d})});
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(errc::io_error, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) raise(errc::io_error, "read failed on '" + path + "'");
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(errc::io_error, "cannot open '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out) raise(errc::io_error, "write failed on '" + path + "'");
}

Json parse_json(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        raise(errc::schema_error, origin + ": " + e.what());
    }
}

Json load_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

Json to_json(const DgpSpec2& g) {
    Json j;
    j["kind"] = "dgp_binary";
    j["p_tstar"] = g.p_tstar;
    j["miscls"] = g.miscls;
    j["alpha"] = g.alpha;
    j["beta"] = g.beta;
    j["eps_offset"] = g.eps_offset;
    j["sigma"] = g.sigma;
    j["pr_z_given_v"] = g.pr_z_given_v;
    j["pr_v1"] = g.pr_v1;
    j["with_x"] = g.with_x;
    j["alpha_x"] = g.alpha_x;
    return j;
}

Json to_json(const DgpSpecK& g) {
    const int k = g.k();
    Json j;
    j["kind"] = "dgp_mixture";
    j["k_u"] = g.k_u;
    j["lam"] = rows_json(g.lam, kCells, k);
    j["emit"] = Json::array({rows_json(g.emit[0], k, k), rows_json(g.emit[1], k, k)});
    j["alpha"] = rows_json(g.alpha, g.k_u, 2);
    j["beta"] = rows_json(g.beta, g.k_u, 2);
    j["sigma"] = g.sigma;
    j["pr_z_given_v"] = g.pr_z_given_v;
    j["pr_v1"] = g.pr_v1;
    return j;
}

std::variant<DgpSpec2, DgpSpecK> dgp_from_json(const Json& j) {
    if (!j.is_object()) bad("spec must be a JSON object");
    const std::string kind = field<std::string>(j, "kind");
    if (kind == "dgp_binary") {
        DgpSpec2 g;
        g.p_tstar = field<std::array<double, kCells>>(j, "p_tstar");
        g.miscls = field<std::array<std::array<double, 2>, 2>>(j, "miscls");
        g.alpha = field<std::array<double, 2>>(j, "alpha");
        g.beta = field<std::array<double, 2>>(j, "beta");
        g.eps_offset = field_or(j, "eps_offset", g.eps_offset);
        g.sigma = field_or(j, "sigma", g.sigma);
        g.pr_z_given_v = field_or(j, "pr_z_given_v", g.pr_z_given_v);
        g.pr_v1 = field_or(j, "pr_v1", g.pr_v1);
        g.with_x = field_or(j, "with_x", g.with_x);
        g.alpha_x = field_or(j, "alpha_x", g.alpha_x);
        validate(g);
        return g;
    }
    if (kind == "dgp_mixture") {
        DgpSpecK g;
        g.k_u = field<int>(j, "k_u");
        if (g.k_u < 1 || g.k_u > 64) bad("field 'k_u': out of range");
        const int k = g.k();
        g.lam = rows_flat(j, "lam", kCells, k);
        const Json& em = need(j, "emit");
        if (!em.is_array() || em.size() != 2)
            bad("field 'emit': expected one K x K table per instrument arm");
        for (int z = 0; z < 2; ++z) g.emit[z] = grid_flat(em[z], "emit", k, k);
        g.alpha = rows_flat(j, "alpha", g.k_u, 2);
        g.beta = rows_flat(j, "beta", g.k_u, 2);
        g.sigma = field_or(j, "sigma", g.sigma);
        g.pr_z_given_v = field_or(j, "pr_z_given_v", g.pr_z_given_v);
        g.pr_v1 = field_or(j, "pr_v1", g.pr_v1);
        validate(g);
        return g;
    }
    bad("unknown spec kind '" + kind + "'");
}

Json to_json(const MomentEstimate& me) {
    Json j;
    j["kind"] = "moments";
    j["m"] = me.m.m;
    j["counts"] = me.m.counts;
    j["n"] = me.m.n;
    j["rate"] = me.m.rate == RateLabel::sqrt_nh ? "sqrt_nh" : "sqrt_n";
    j["a_n"] = me.m.a_n;
    j["h"] = me.m.h;
    j["xdim"] = me.m.xdim;
    Json cov = Json::array();
    for (const auto& b : me.cov.block) cov.push_back(b);
    j["cov"] = std::move(cov);
    j["warnings"] = me.warnings;
    return j;
}

MomentEstimate moments_from_json(const Json& j) {
    if (!j.is_object()) bad("moments input must be a JSON object");
    if (field_or<std::string>(j, "kind", "moments") != "moments")
        bad("expected kind 'moments'");
    MomentEstimate me;
    me.m.m = field<std::array<double, 12>>(j, "m");
    me.m.counts = field_or(j, "counts", me.m.counts);
    me.m.n = field_or<std::int64_t>(j, "n", 0);
    const std::string rate = field_or<std::string>(j, "rate", "sqrt_n");
    if (rate == "sqrt_n")
        me.m.rate = RateLabel::sqrt_n;
    else if (rate == "sqrt_nh")
        me.m.rate = RateLabel::sqrt_nh;
    else
        bad("field 'rate': unknown value '" + rate + "'");
    me.m.h = field_or(j, "h", 0.0);
    me.m.xdim = field_or(j, "xdim", 0);
    me.m.a_n = field_or(j, "a_n", 0.0);
    if (me.m.a_n == 0.0 && me.m.rate == RateLabel::sqrt_n && me.m.n > 0)
        me.m.a_n = std::sqrt(static_cast<double>(me.m.n));
    if (j.contains("cov")) {
        const Json& cv = j["cov"];
        if (!cv.is_array() || cv.size() != kCells)
            bad("field 'cov': expected one flat 3x3 block per cell");
        for (int c = 0; c < kCells; ++c) {
            try {
                me.cov.block[static_cast<std::size_t>(c)] = cv[static_cast<std::size_t>(c)].get<std::array<double, 9>>();
            } catch (const Json::exception& e) {
                bad(std::string("field 'cov': ") + e.what());
            }
        }
    }
    me.warnings = field_or(j, "warnings", me.warnings);
    return me;
}

Json to_json(const Diagnostics& d) {
    Json j;
    j["eigenvalues"] = d.eigenvalues;
    j["eig_gap"] = d.eig_gap;
    j["label_margin"] = d.label_margin;
    j["min_prob_margin"] = d.min_prob_margin;
    j["max_cond"] = d.max_cond;
    j["recon_err"] = d.recon_err;
    j["cross_err"] = d.cross_err;
    j["warnings"] = d.warnings;
    return j;
}

Json to_json(const DecompositionSet& s) {
    Json j;
    j["l_t"] = Json::array({mat2_json(s.l_t[0]), mat2_json(s.l_t[1])});
    j["l_y"] = Json::array({mat2_json(s.l_y[0]), mat2_json(s.l_y[1])});
    j["lambda"] = s.lambda;
    j["alpha"] = s.alpha;
    j["beta"] = s.beta;
    j["diagnostics"] = to_json(s.diag);
    return j;
}

Json to_json(const MixDiagnostics& d) {
    Json j;
    j["eigenvalues"] = d.eigenvalues;
    j["eig_gap"] = d.eig_gap;
    j["dominance_margin"] = d.dominance_margin;
    j["min_prob_margin"] = d.min_prob_margin;
    j["max_cond"] = d.max_cond;
    j["l_y_cond"] = d.l_y_cond;
    j["recon_err"] = d.recon_err;
    j["warnings"] = d.warnings;
    return j;
}

Json to_json(const MixtureDecomposition& m) {
    const int k = m.k;
    Json j;
    j["k"] = k;
    j["l_t"] = Json::array({rows_json(m.l_t[0], k, k), rows_json(m.l_t[1], k, k)});
    j["l_y"] = Json::array({rows_json(m.l_y[0], k, k), rows_json(m.l_y[1], k, k)});
    j["emission"] = Json::array({rows_json(m.emission[0], k, k), rows_json(m.emission[1], k, k)});
    j["lambda"] = m.lambda;
    j["diagnostics"] = to_json(m.diag);
    return j;
}

Json to_json(const HeteroAlphaBeta& ab) {
    Json j;
    j["k_u"] = ab.k_u;
    j["alpha"] = rows_json(ab.alpha, ab.k_u, 2);
    j["beta"] = rows_json(ab.beta, ab.k_u, 2);
    j["ey_sstar"] = rows_json(ab.ey_sstar, 2 * ab.k_u, 2);
    j["pr_t1_u"] = ab.pr_t1_u;
    return j;
}

Json to_json(const FitResult& f) {
    Json j;
    j["phi"] = f.phi;
    j["theta"] = f.theta;
    j["theta_names"] = theta_names();
    j["se_phi"] = f.se_phi;
    j["se_theta"] = f.se_theta;
    j["cov_phi"] = mat12_rows(f.cov_phi);
    j["cov_theta"] = mat12_rows(f.cov_theta);
    j["a_n"] = f.a_n;
    j["objective"] = f.objective;
    j["iterations"] = f.iterations;
    j["used_fallback"] = f.used_fallback;
    j["init_error"] = f.init_error;
    j["plugin_diagnostics"] = to_json(f.ident_diag);
    return j;
}

Json to_json(const EffectsReport& e) {
    Json j;
    j["k_u"] = e.k_u;
    j["route"] = e.route;
    j["late"] = e.late;
    j["ate"] = e.ate;
    j["tt"] = e.tt;
    j["tut"] = e.tut;
    j["pr_t1"] = e.pr_t1;
    j["pr_u_v"] = rows_json(e.pr_u_v, e.k_u, 2);
    j["pr_u_t1"] = rows_json(e.pr_u_t1, e.k_u, 2);
    j["pr_u_t0"] = rows_json(e.pr_u_t0, e.k_u, 2);
    j["beta"] = rows_json(e.beta, e.k_u, 2);
    if (e.pooled) {
        Json p;
        p["late"] = e.pooled->late;
        p["ate"] = e.pooled->ate;
        p["tt"] = e.pooled->tt;
        p["tut"] = e.pooled->tut;
        p["pr_t1"] = e.pooled->pr_t1;
        j["pooled"] = std::move(p);
    } else {
        j["pooled"] = nullptr;
    }
    return j;
}

Json to_json(const EffectsTruth& e) {
    Json j;
    j["ate"] = e.ate;
    j["tt"] = e.tt;
    j["tut"] = e.tut;
    j["late"] = e.late;
    return j;
}

Json to_json(const MonteCarloSummary& s) {
    Json j;
    j["n"] = s.n;
    j["reps"] = s.reps;
    j["seed"] = s.seed;
    j["n_success"] = s.n_success;
    j["n_fail"] = s.n_fail;
    j["n_used_fallback"] = s.n_used_fallback;
    j["failures"] = s.failures;
    j["theta_true"] = s.theta_true;
    Json comps = Json::array();
    for (const auto& c : s.comp) {
        Json e;
        e["name"] = c.name;
        e["truth"] = c.truth;
        e["mean"] = c.mean;
        e["bias"] = c.bias;
        e["sd"] = c.sd;
        e["rmse"] = c.rmse;
        e["mean_se"] = c.mean_se;
        e["se_ratio"] = c.se_ratio;
        e["coverage"] = c.coverage;
        comps.push_back(std::move(e));
    }
    j["components"] = std::move(comps);
    return j;
}

}  // namespace miv
