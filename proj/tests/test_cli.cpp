#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "miv/cli.hpp"
#include "miv/csv.hpp"
#include "miv/dgp.hpp"
#include "miv/json_io.hpp"

#include "fixtures.hpp"

using namespace miv;

namespace {

namespace fs = std::filesystem;

std::string spath(const std::string& name) {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "miv_cli_scratch";
        fs::create_directories(p);
        return p;
    }();
    return (dir / name).string();
}

int cli(std::initializer_list<std::string> args) {
    std::vector<std::string> argv{"miv"};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_cli(argv);
}

std::string spec_file(const std::string& name, const Json& j) {
    const std::string path = spath(name);
    write_text_file(path, j.dump(2) + "\n");
    return path;
}

}  // namespace

TEST_CASE("simulate emits deterministic rows and honors the latent dump") {
    const std::string spec = spec_file("dgp_a.json", to_json(fixtures::dgp_a()));
    const std::string a = spath("sim_a.csv");
    const std::string b = spath("sim_b.csv");
    REQUIRE(cli({"simulate", "--input", spec, "--n", "500", "--seed", "3", "--output", a}) == 0);
    REQUIRE(cli({"simulate", "--input", spec, "--n", "500", "--seed", "3", "--output", b}) == 0);
    CHECK(read_text_file(a) == read_text_file(b));

    const Dataset d = read_csv(a);
    CHECK(d.y.size() == 500);
    CHECK_FALSE(d.has_u());
    CHECK(d.latent_tstar.empty());

    const std::string c = spath("sim_c.csv");
    REQUIRE(cli({"simulate", "--input", spec, "--n", "100", "--seed", "3", "--output", c,
                 "--latent-dump"}) == 0);
    CHECK(read_text_file(c).find("latent_tstar") != std::string::npos);

    // input failures are exit 1: missing file, then an out-of-range spec
    CHECK(cli({"simulate", "--input", spath("no_such.json"), "--output", a}) == 1);
    DgpSpec2 bad = fixtures::dgp_a();
    bad.p_tstar[0] = 1.5;
    const std::string bad_spec = spec_file("dgp_bad.json", to_json(bad));
    CHECK(cli({"simulate", "--input", bad_spec, "--output", a}) == 1);
}

TEST_CASE("identification report reproduces the spec parameters from exact moments") {
    const DgpSpec2 g = fixtures::dgp_a();
    const std::string mfile =
        spec_file("moments_a.json", to_json(fixtures::oracle_estimate(g)));
    const std::string rep = spath("ident_a.json");
    REQUIRE(cli({"identify", "--mode", "prop1", "--input", mfile, "--output", rep}) == 0);

    const Json r = load_json_file(rep);
    CHECK(r["schema_version"] == 1);
    CHECK(r["command"] == "identify");
    CHECK(r["config"]["mode"] == "prop1");
    CHECK_FALSE(r.contains("error"));

    const Json& dec = r["decomposition"];
    CHECK(dec["alpha"][0].get<double>() == doctest::Approx(g.alpha[0]).epsilon(1e-9));
    CHECK(dec["alpha"][1].get<double>() == doctest::Approx(g.alpha[1]).epsilon(1e-9));
    CHECK(dec["beta"][0].get<double>() == doctest::Approx(g.beta[0]).epsilon(1e-9));
    CHECK(dec["beta"][1].get<double>() == doctest::Approx(g.beta[1]).epsilon(1e-9));
    // second row of L_T(z) is Pr(T=1 | T*, z); lambda[cell][1] is Pr(T*=1 | cell)
    CHECK(dec["l_t"][0][1][0].get<double>() == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(dec["l_t"][1][1][1].get<double>() == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(dec["lambda"][2][1].get<double>() == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("estimation consumes rows, localizes with kernels, and reports calibrated errors") {
    const std::string spec = spec_file("dgp_a.json", to_json(fixtures::dgp_a()));
    const std::string rows = spath("est_rows.csv");
    REQUIRE(cli({"simulate", "--input", spec, "--n", "100000", "--seed", "41", "--output",
                 rows}) == 0);

    const std::string rep = spath("est_rep.json");
    REQUIRE(cli({"estimate", "--input", rows, "--output", rep}) == 0);
    const Json r = load_json_file(rep);
    CHECK(r["moments"]["n"] == 100000);
    CHECK(r["moments"]["rate"] == "sqrt_n");
    CHECK(r["estimate"]["used_fallback"] == false);
    const auto truth = oracle_theta(fixtures::dgp_a());
    for (int i = 0; i < 12; ++i) {
        const double th = r["estimate"]["theta"][static_cast<std::size_t>(i)].get<double>();
        const double se = r["estimate"]["se_theta"][static_cast<std::size_t>(i)].get<double>();
        CHECK(se > 0.0);
        CHECK(std::fabs(th - truth[static_cast<std::size_t>(i)]) < 6.0 * se);
    }

    // kernel localization: the declared rate switches and the errors widen
    const std::string spec_x = spec_file("dgp_a_x.json", to_json(fixtures::dgp_a_x()));
    const std::string rows_x = spath("est_rows_x.csv");
    REQUIRE(cli({"simulate", "--input", spec_x, "--n", "60000", "--seed", "8", "--output",
                 rows_x}) == 0);
    const std::string rep_x = spath("est_rep_x.json");
    REQUIRE(cli({"estimate", "--input", rows_x, "--x", "kernel:0.5", "--output", rep_x}) == 0);
    const Json rx = load_json_file(rep_x);
    CHECK(rx["moments"]["rate"] == "sqrt_nh");
    CHECK(rx["moments"]["h"].get<double>() > 0.0);
    CHECK(rx["estimate"]["se_theta"][0].get<double>() >
          r["estimate"]["se_theta"][0].get<double>());
}

TEST_CASE("schema violations and math failures map to distinct exit codes") {
    // missing mandatory column
    const std::string no_t = spath("no_t.csv");
    write_text_file(no_t, "y,z,v\n1.0,0,0\n2.0,1,1\n");
    const std::string rep = spath("err_rep.json");
    CHECK(cli({"identify", "--input", no_t, "--output", rep}) == 1);
    Json r = load_json_file(rep);
    CHECK(r["error"]["name"] == "SchemaError");
    CHECK(r["error"]["exit_code"] == 1);

    // missing file
    CHECK(cli({"identify", "--input", spath("missing.csv"), "--output", rep}) == 1);
    CHECK(load_json_file(rep)["error"]["name"] == "IoError");

    // unusable --x request
    const std::string rows = spath("tiny.csv");
    write_text_file(rows, "y,t,z,v\n1.0,0,0,0\n2.0,1,1,1\n");
    CHECK(cli({"estimate", "--input", rows, "--x", "bogus", "--output", rep}) == 1);
    CHECK(load_json_file(rep)["error"]["name"] == "InvalidSpec");

    // an instrument that moves nothing: exact moments, so the spectrum
    // collapses exactly and the failure is a math failure, exit 2
    DgpSpec2 flat = fixtures::dgp_a();
    flat.p_tstar = {0.3, 0.3, 0.8, 0.8};
    flat.miscls = {{{0.1, 0.8}, {0.1, 0.8}}};
    const std::string mflat =
        spec_file("moments_flat.json", to_json(fixtures::oracle_estimate(flat)));
    CHECK(cli({"identify", "--mode", "prop1", "--input", mflat, "--output", rep}) == 2);
    r = load_json_file(rep);
    CHECK(r["error"]["name"] == "EigenvaluesNotDistinct");
    CHECK(r["error"]["exit_code"] == 2);

    // rows present but one (z,v) cell empty
    const std::string half = spath("half.csv");
    std::string text = "y,t,z,v\n";
    for (int i = 0; i < 8; ++i)
        text += std::to_string(1.0 + i) + "," + std::to_string(i % 2) + ",1," +
                std::to_string(i % 2) + "\n";
    write_text_file(half, text);
    CHECK(cli({"estimate", "--input", half, "--output", rep}) == 2);
    CHECK(load_json_file(rep)["error"]["name"] == "EmptyCell");
}

TEST_CASE("config files fill in what the command line leaves unset") {
    const std::string spec = spec_file("dgp_a.json", to_json(fixtures::dgp_a()));
    const std::string cfg = spath("run_cfg.json");
    write_text_file(cfg, R"({"n": 250, "seed": 9, "input": ")" + spec + R"("})");

    const std::string a = spath("cfg_a.csv");
    REQUIRE(cli({"simulate", "--config", cfg, "--output", a}) == 0);
    CHECK(read_csv(a).y.size() == 250);

    // explicit flags win over the file
    const std::string b = spath("cfg_b.csv");
    REQUIRE(cli({"simulate", "--config", cfg, "--n", "100", "--output", b}) == 0);
    CHECK(read_csv(b).y.size() == 100);

    // unknown keys are typos, not extensions
    const std::string bad = spath("bad_cfg.json");
    write_text_file(bad, R"({"samples": 10})");
    CHECK(cli({"simulate", "--config", bad, "--input", spec, "--output", a}) == 1);
    write_text_file(bad, R"({"tol": {"probability": 0.1}})");
    CHECK(cli({"simulate", "--config", bad, "--input", spec, "--output", a}) == 1);
}

TEST_CASE("replication studies serialize stably and degrade gracefully") {
    const std::string spec = spec_file("dgp_a.json", to_json(fixtures::dgp_a()));
    // the report echoes its own destination inside the resolved config, so
    // byte-stability is across identical invocations: same path, run twice
    const std::string r1 = spath("mc_rerun.json");
    REQUIRE(cli({"montecarlo", "--input", spec, "--n", "20000", "--reps", "5", "--seed", "17",
                 "--output", r1}) == 0);
    const std::string first = read_text_file(r1);
    REQUIRE(cli({"montecarlo", "--input", spec, "--n", "20000", "--reps", "5", "--seed", "17",
                 "--output", r1}) == 0);
    CHECK(first == read_text_file(r1));

    const Json r = load_json_file(r1);
    CHECK(r["config"]["reps"] == 5);
    const Json& mc = r["montecarlo"];
    CHECK(mc["n_success"] == 5);
    CHECK(mc["components"].size() == 12);
    CHECK(mc["theta_true"][0].get<double>() == 1.0);
    CHECK(mc["components"][0]["coverage"].is_number());

    // a single replication cannot speak to dispersion: those stats are null
    const std::string rone = spath("mc_one.json");
    REQUIRE(cli({"montecarlo", "--input", spec, "--n", "20000", "--reps", "1", "--seed", "17",
                 "--output", rone}) == 0);
    const Json one = load_json_file(rone);
    CHECK(one["montecarlo"]["components"][0]["sd"].is_null());
    CHECK(one["montecarlo"]["components"][0]["coverage"].is_null());

    // the replication engine covers the binary world only
    const std::string mspec = spec_file("dgp_m.json", to_json(fixtures::dgp_m()));
    CHECK(cli({"montecarlo", "--input", mspec, "--output", rone}) == 1);
    CHECK(load_json_file(rone)["error"]["name"] == "InvalidSpec");
}

TEST_CASE("effects and mixture identification run from a spec or from rows") {
    const DgpSpecK g = fixtures::dgp_m();
    const std::string mspec = spec_file("dgp_m.json", to_json(g));

    // oracle route: population enumeration of the bundled mixture world
    const std::string rep = spath("eff_oracle.json");
    REQUIRE(cli({"effects", "--input", mspec, "--output", rep}) == 0);
    const Json ro = load_json_file(rep);
    const EffectsTruth truth = oracle_effects(g);
    for (int v = 0; v < 2; ++v) {
        CHECK(ro["effects_truth"]["ate"][static_cast<std::size_t>(v)].get<double>() ==
              doctest::Approx(truth.ate[static_cast<std::size_t>(v)]).epsilon(1e-12));
        CHECK(ro["effects_truth"]["late"][static_cast<std::size_t>(v)].get<double>() ==
              doctest::Approx(truth.late[static_cast<std::size_t>(v)]).epsilon(1e-12));
    }
    // a binary-world spec has no latent mixture to enumerate
    const std::string aspec = spec_file("dgp_a.json", to_json(fixtures::dgp_a()));
    CHECK(cli({"effects", "--input", aspec, "--output", rep}) == 1);

    // data route: simulate, decompose, weight
    const std::string rows = spath("mix_rows.csv");
    REQUIRE(cli({"simulate", "--input", mspec, "--n", "300000", "--seed", "29", "--output",
                 rows}) == 0);

    const std::string irep = spath("mix_ident.json");
    REQUIRE(cli({"identify", "--mode", "mixture", "--ku", "2", "--tol-prob", "0.1", "--input",
                 rows, "--output", irep}) == 0);
    const Json ri = load_json_file(irep);
    CHECK(ri["decomposition"]["k"] == 4);
    CHECK(ri["partition"]["cuts"].size() == 3);
    CHECK(ri["pr_z_given_v"][0].get<double>() == doctest::Approx(0.5).epsilon(0.02));
    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
            const auto su = static_cast<std::size_t>(u);
            const auto sv = static_cast<std::size_t>(v);
            CHECK(std::fabs(ri["coefficients"]["beta"][su][sv].get<double>() -
                            g.beta[static_cast<std::size_t>(u * 2 + v)]) < 0.8);
        }

    const std::string erep = spath("eff_rows.json");
    REQUIRE(cli({"effects", "--ku", "2", "--tol-prob", "0.1", "--input", rows, "--output",
                 erep}) == 0);
    const Json re = load_json_file(erep);
    for (int v = 0; v < 2; ++v) {
        const auto sv = static_cast<std::size_t>(v);
        CHECK(std::fabs(re["effects"]["ate"][sv].get<double>() - truth.ate[sv]) < 0.8);
        CHECK(std::fabs(re["effects"]["tt"][sv].get<double>() - truth.tt[sv]) < 0.8);
    }
    CHECK(re["effects"]["pooled"]["ate"].is_number());
}
