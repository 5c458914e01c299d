#include "miv/cli.hpp"

#include <cstdio>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <variant>

#include <CLI11.hpp>

#include "miv/csv.hpp"
#include "miv/dgp.hpp"
#include "miv/effects.hpp"
#include "miv/errors.hpp"
#include "miv/ident2.hpp"
#include "miv/identk.hpp"
#include "miv/json_io.hpp"
#include "miv/mde.hpp"
#include "miv/moments.hpp"
#include "miv/montecarlo.hpp"

namespace miv {

namespace {

struct XSpec {
    enum class Kind { none, discrete, kernel } kind = Kind::none;
    double level = 0;        // discrete: exact covariate value to condition on
    std::vector<double> q;   // kernel: query point, one coordinate per x column
};

std::vector<double> parse_numbers(const std::string& body) {
    std::vector<double> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t comma = body.find(',', pos);
        const std::string tok =
            body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::size_t used = 0;
        double val = 0;
        try {
            val = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || tok.empty())
            raise(errc::invalid_spec, "--x: cannot parse '" + tok + "' as a number");
        out.push_back(val);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

XSpec parse_x(const std::string& s) {
    XSpec xs;
    if (s.empty() || s == "none") return xs;
    if (s.rfind("discrete:", 0) == 0) {
        const auto vals = parse_numbers(s.substr(9));
        if (vals.size() != 1) raise(errc::invalid_spec, "--x discrete: takes exactly one level");
        xs.kind = XSpec::Kind::discrete;
        xs.level = vals[0];
        return xs;
    }
    if (s.rfind("kernel:", 0) == 0) {
        xs.kind = XSpec::Kind::kernel;
        xs.q = parse_numbers(s.substr(7));
        return xs;
    }
    raise(errc::invalid_spec, "--x: expected none, discrete:<level>, or kernel:<x1,x2,...>");
}

KernelKind parse_kernel(const std::string& s) {
    if (s == "gaussian") return KernelKind::gaussian;
    if (s == "epanechnikov") return KernelKind::epanechnikov;
    raise(errc::invalid_spec, "--kernel: expected gaussian or epanechnikov");
}

Json config_json(const RunConfig& rc) {
    Json j;
    j["subcommand"] = rc.subcommand;
    j["input"] = rc.input;
    j["output"] = rc.output;
    j["mode"] = rc.mode;
    j["x"] = rc.x;
    j["bandwidth"] = rc.bandwidth;
    j["kernel"] = rc.kernel;
    j["ku"] = rc.ku;
    j["partition"] = rc.partition;
    j["seed"] = rc.seed;
    j["n"] = rc.n;
    j["reps"] = rc.reps;
    j["latent_dump"] = rc.latent_dump;
    Json t;
    t["max_cond"] = rc.tol.max_cond;
    t["eig_gap"] = rc.tol.eig_gap;
    t["label"] = rc.tol.label;
    t["prob"] = rc.tol.prob;
    t["disc"] = rc.tol.disc;
    t["imag"] = rc.tol.imag;
    t["vec"] = rc.tol.vec;
    t["rel_gap"] = rc.tol.rel_gap;
    t["cross"] = rc.tol.cross;
    j["tol"] = std::move(t);
    return j;
}

void emit(const RunConfig& rc, const Json& report) {
    const std::string text = report.dump(2) + "\n";
    if (rc.output.empty())
        std::fwrite(text.data(), 1, text.size(), stdout);
    else
        write_text_file(rc.output, text);
}

// Shared command wrapper: the report always carries the resolved config and
// is written even on failure, with the error name and exit code embedded.
int guarded(const RunConfig& rc, const std::function<void(Json&)>& body) {
    Json report;
    report["schema_version"] = 1;
    report["command"] = rc.subcommand;
    report["config"] = config_json(rc);
    int code = 0;
    try {
        body(report);
    } catch (const error& e) {
        code = errc_is_math(e.code()) ? 2 : 1;
        report["error"] = Json{{"name", e.name()}, {"message", e.what()}, {"exit_code", code}};
    } catch (const std::exception& e) {
        code = 1;
        report["error"] = Json{{"name", "Unhandled"}, {"message", e.what()}, {"exit_code", code}};
    }
    try {
        emit(rc, report);
    } catch (const error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        if (code == 0) code = 1;
    }
    return code;
}

char first_nonspace(const std::string& text) {
    for (const char c : text)
        if (c != ' ' && c != '\t' && c != '\r' && c != '\n') return c;
    return '\0';
}

// k_u == 1 means the proxy state is T alone; a missing u column is then the
// constant zero group
void fill_default_u(Dataset& d, int k_u) {
    if (k_u == 1 && !d.has_u()) d.u.assign(d.y.size(), 0);
}

MomentEstimate data_moments(const Dataset& d, const XSpec& xs, const RunConfig& rc) {
    switch (xs.kind) {
        case XSpec::Kind::none:
            return estimate_moments_discrete(d);
        case XSpec::Kind::discrete:
            return estimate_moments_discrete(d, xs.level);
        case XSpec::Kind::kernel: {
            KernelConfig kc;
            kc.x = xs.q;
            kc.h = rc.bandwidth > 0 ? rc.bandwidth : bandwidth_rule_of_thumb(d);
            kc.kernel = parse_kernel(rc.kernel);
            return estimate_moments_kernel(d, kc);
        }
    }
    raise(errc::invalid_spec, "--x: unrecognized handling");
}

void require_input(const RunConfig& rc, const char* what) {
    if (rc.input.empty()) raise(errc::io_error, std::string("missing --input (") + what + ")");
}

}  // namespace

int cmd_identify(const RunConfig& rc) {
    return guarded(rc, [&](Json& report) {
        require_input(rc, "CSV rows or moments JSON");
        const std::string text = read_text_file(rc.input);
        const bool is_json = first_nonspace(text) == '{';
        const XSpec xs = parse_x(rc.x);

        if (rc.mode == "mixture") {
            if (is_json)
                raise(errc::invalid_spec,
                      "mixture identification needs row data (CSV), not a moments file");
            if (xs.kind != XSpec::Kind::none)
                raise(errc::invalid_spec, "mixture mode has no covariate localization");
            Dataset d = read_csv_text(text, rc.input);
            fill_default_u(d, rc.ku);
            MixtureTables tables;
            MixtureDecomposition dec;
            Json pj;
            if (!rc.partition.empty()) {
                Partition part{rc.partition};
                tables = build_mixture_tables(d, part, rc.ku);
                dec = identify_mixture(build_qk(tables), rc.tol);
                pj["searched"] = false;
                pj["trials"] = 1;
            } else {
                MixturePipelineResult pr = mixture_pipeline(d, rc.ku, rc.tol);
                tables = std::move(pr.tables);
                dec = std::move(pr.dec);
                pj["searched"] = pr.partition_searched;
                pj["trials"] = pr.partition_trials;
            }
            pj["cuts"] = tables.part.cuts;
            const auto pzv = pr_z_given_v_hat(tables);
            const HeteroAlphaBeta ab = identify_alpha_beta_hetero(dec, pzv, tables, rc.tol);
            report["partition"] = std::move(pj);
            report["counts"] = tables.counts;
            report["n"] = tables.n;
            report["pr_z_given_v"] = pzv;
            report["decomposition"] = to_json(dec);
            report["coefficients"] = to_json(ab);
            return;
        }

        if (rc.mode != "prop1" && rc.mode != "prop2")
            raise(errc::invalid_spec, "--mode: expected prop1, prop2, or mixture");
        MomentEstimate me;
        if (is_json) {
            me = moments_from_json(parse_json(text, rc.input));
        } else {
            const Dataset d = read_csv_text(text, rc.input);
            me = data_moments(d, xs, rc);
        }
        const Q2Set q = build_q(me.m);
        const DecompositionSet dec =
            rc.mode == "prop1" ? identify_prop1(q, rc.tol) : identify_prop2(q, rc.tol);
        report["moments"] = to_json(me);
        report["decomposition"] = to_json(dec);
    });
}

int cmd_estimate(const RunConfig& rc) {
    return guarded(rc, [&](Json& report) {
        require_input(rc, "CSV rows or moments JSON");
        const std::string text = read_text_file(rc.input);
        MomentEstimate me;
        if (first_nonspace(text) == '{') {
            me = moments_from_json(parse_json(text, rc.input));
        } else {
            const Dataset d = read_csv_text(text, rc.input);
            me = data_moments(d, parse_x(rc.x), rc);
        }
        FitOptions opt;
        opt.tol = rc.tol;
        const FitResult fit = fit_minimum_distance(me, opt);
        report["moments"] = to_json(me);
        report["estimate"] = to_json(fit);
    });
}

int cmd_simulate(const RunConfig& rc) {
    try {
        require_input(rc, "DGP spec JSON");
        const auto spec = dgp_from_json(load_json_file(rc.input));
        const Dataset d = std::visit(
            [&](const auto& g) { return simulate(g, rc.n, rc.seed, 0, rc.latent_dump); }, spec);
        const std::string text = write_csv_text(d, rc.latent_dump);
        if (rc.output.empty())
            std::fwrite(text.data(), 1, text.size(), stdout);
        else
            write_text_file(rc.output, text);
        return 0;
    } catch (const error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return errc_is_math(e.code()) ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
}

int cmd_montecarlo(const RunConfig& rc) {
    return guarded(rc, [&](Json& report) {
        require_input(rc, "DGP spec JSON");
        const auto spec = dgp_from_json(load_json_file(rc.input));
        const DgpSpec2* g = std::get_if<DgpSpec2>(&spec);
        if (!g)
            raise(errc::invalid_spec,
                  "the replication study runs on the binary-regressor world only");
        MonteCarloConfig mc;
        mc.n = rc.n;
        mc.reps = rc.reps;
        mc.seed = rc.seed;
        mc.fit.tol = rc.tol;
        const XSpec xs = parse_x(rc.x);
        if (xs.kind == XSpec::Kind::discrete)
            raise(errc::invalid_spec,
                  "--x: replications localize with kernel weights; use kernel:<x1,...>");
        if (xs.kind == XSpec::Kind::kernel) {
            KernelConfig kc;
            kc.x = xs.q;
            kc.h = rc.bandwidth;  // 0: per-replication rule of thumb
            kc.kernel = parse_kernel(rc.kernel);
            mc.kernel = std::move(kc);
        }
        report["montecarlo"] = to_json(run_montecarlo(*g, mc));
    });
}

int cmd_effects(const RunConfig& rc) {
    return guarded(rc, [&](Json& report) {
        require_input(rc, "CSV rows or DGP spec JSON");
        const std::string text = read_text_file(rc.input);
        if (first_nonspace(text) == '{') {
            const auto spec = dgp_from_json(parse_json(text, rc.input));
            const DgpSpecK* g = std::get_if<DgpSpecK>(&spec);
            if (!g)
                raise(errc::invalid_spec,
                      "the effects oracle route takes a mixture spec; binary worlds reduce to "
                      "beta(v)");
            report["route"] = "population enumeration";
            report["effects_truth"] = to_json(oracle_effects(*g));
            return;
        }
        Dataset d = read_csv_text(text, rc.input);
        fill_default_u(d, rc.ku);
        const MixturePipelineResult pr = mixture_pipeline(d, rc.ku, rc.tol);
        const auto pzv = pr_z_given_v_hat(pr.tables);
        const HeteroAlphaBeta ab = identify_alpha_beta_hetero(pr.dec, pzv, pr.tables, rc.tol);
        double v1 = 0;
        for (const int v : d.v) v1 += v;
        const double pv1 = d.v.empty() ? 0.0 : v1 / static_cast<double>(d.v.size());
        const EffectsReport er = ate_tt_tut(pr.dec, ab, pzv, pv1);
        Json pj;
        pj["cuts"] = pr.part.cuts;
        pj["searched"] = pr.partition_searched;
        pj["trials"] = pr.partition_trials;
        report["partition"] = std::move(pj);
        report["pr_z_given_v"] = pzv;
        report["effects"] = to_json(er);
    });
}

namespace {

void apply_config(const Json& cfg, CLI::App* sub, RunConfig& rc) {
    if (!cfg.is_object()) raise(errc::schema_error, "config file: expected a JSON object");
    const auto unset = [&](const char* flag) { return sub->count(flag) == 0; };
    try {
        for (const auto& [key, val] : cfg.items()) {
            if (key == "input") {
                if (unset("--input")) rc.input = val.get<std::string>();
            } else if (key == "output") {
                if (unset("--output")) rc.output = val.get<std::string>();
            } else if (key == "mode") {
                if (unset("--mode")) rc.mode = val.get<std::string>();
            } else if (key == "x") {
                if (unset("--x")) rc.x = val.get<std::string>();
            } else if (key == "bandwidth") {
                if (unset("--bandwidth")) rc.bandwidth = val.get<double>();
            } else if (key == "kernel") {
                if (unset("--kernel")) rc.kernel = val.get<std::string>();
            } else if (key == "ku") {
                if (unset("--ku")) rc.ku = val.get<int>();
            } else if (key == "partition") {
                if (unset("--partition")) rc.partition = val.get<std::vector<double>>();
            } else if (key == "seed") {
                if (unset("--seed")) rc.seed = val.get<std::uint64_t>();
            } else if (key == "n") {
                if (unset("--n")) rc.n = val.get<std::size_t>();
            } else if (key == "reps") {
                if (unset("--reps")) rc.reps = val.get<int>();
            } else if (key == "latent_dump") {
                if (unset("--latent-dump")) rc.latent_dump = val.get<bool>();
            } else if (key == "tol") {
                if (!val.is_object()) raise(errc::schema_error, "config file: 'tol' must be an object");
                for (const auto& [tk, tv] : val.items()) {
                    double* dst = nullptr;
                    const char* flag = nullptr;
                    if (tk == "max_cond") {
                        dst = &rc.tol.max_cond, flag = "--tol-max-cond";
                    } else if (tk == "eig_gap") {
                        dst = &rc.tol.eig_gap, flag = "--tol-eig-gap";
                    } else if (tk == "label") {
                        dst = &rc.tol.label, flag = "--tol-label";
                    } else if (tk == "prob") {
                        dst = &rc.tol.prob, flag = "--tol-prob";
                    } else if (tk == "disc") {
                        dst = &rc.tol.disc, flag = "--tol-disc";
                    } else if (tk == "imag") {
                        dst = &rc.tol.imag, flag = "--tol-imag";
                    } else if (tk == "vec") {
                        dst = &rc.tol.vec, flag = "--tol-vec";
                    } else if (tk == "rel_gap") {
                        dst = &rc.tol.rel_gap, flag = "--tol-rel-gap";
                    } else if (tk == "cross") {
                        dst = &rc.tol.cross, flag = "--tol-cross";
                    } else {
                        raise(errc::schema_error, "config file: unknown tol key '" + tk + "'");
                    }
                    if (unset(flag)) *dst = tv.get<double>();
                }
            } else {
                raise(errc::schema_error, "config file: unknown key '" + key + "'");
            }
        }
    } catch (const Json::exception& e) {
        raise(errc::schema_error, std::string("config file: ") + e.what());
    }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"identification and estimation with a misclassified endogenous binary regressor"};
    app.require_subcommand(1);
    RunConfig rc;
    std::string config_path;

    const auto add_flags = [&](CLI::App* s) {
        s->add_option("--input", rc.input, "CSV rows, moments JSON, or DGP spec JSON");
        s->add_option("--output", rc.output, "report path (stdout when omitted)");
        s->add_option("--config", config_path, "JSON config file; explicit flags win");
        s->add_option("--mode", rc.mode, "prop1 | prop2 | mixture")
            ->check(CLI::IsMember({"prop1", "prop2", "mixture"}));
        s->add_option("--x", rc.x, "none | discrete:<level> | kernel:<x1,x2,...>");
        s->add_option("--bandwidth", rc.bandwidth, "kernel bandwidth; 0 = rule of thumb");
        s->add_option("--kernel", rc.kernel, "gaussian | epanechnikov")
            ->check(CLI::IsMember({"gaussian", "epanechnikov"}));
        s->add_option("--ku", rc.ku, "latent group count");
        s->add_option("--partition", rc.partition, "outcome cut points c1,c2,...")
            ->delimiter(',');
        s->add_option("--seed", rc.seed, "RNG seed");
        s->add_option("--n", rc.n, "sample size per draw");
        s->add_option("--reps", rc.reps, "replication count");
        s->add_flag("--latent-dump", rc.latent_dump, "emit latent_* columns from simulate");
        s->add_option("--tol-max-cond", rc.tol.max_cond, "condition-number ceiling");
        s->add_option("--tol-eig-gap", rc.tol.eig_gap, "eigenvalue separation floor");
        s->add_option("--tol-label", rc.tol.label, "labeling margin floor");
        s->add_option("--tol-prob", rc.tol.prob, "probability clamp slack");
        s->add_option("--tol-disc", rc.tol.disc, "discriminant cutoff");
        s->add_option("--tol-imag", rc.tol.imag, "imaginary-part cutoff");
        s->add_option("--tol-vec", rc.tol.vec, "eigenvector entry floor");
        s->add_option("--tol-rel-gap", rc.tol.rel_gap, "instrument relevance floor");
        s->add_option("--tol-cross", rc.tol.cross, "cross-arm agreement tolerance");
    };

    add_flags(app.add_subcommand("identify", "recover the latent factorization from moments"));
    add_flags(app.add_subcommand("estimate", "minimum-distance fit with delta-method errors"));
    add_flags(app.add_subcommand("simulate", "draw a synthetic dataset from a spec"));
    add_flags(app.add_subcommand("montecarlo", "replication study of the estimator"));
    add_flags(app.add_subcommand("effects", "treatment-effect summaries"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    rc.subcommand = sub->get_name();
    if (!config_path.empty()) {
        try {
            apply_config(load_json_file(config_path), sub, rc);
        } catch (const error& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 1;
        }
    }

    if (rc.subcommand == "identify") return cmd_identify(rc);
    if (rc.subcommand == "estimate") return cmd_estimate(rc);
    if (rc.subcommand == "simulate") return cmd_simulate(rc);
    if (rc.subcommand == "montecarlo") return cmd_montecarlo(rc);
    return cmd_effects(rc);
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace miv
