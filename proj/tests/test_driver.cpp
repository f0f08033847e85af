#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "armt/driver.hpp"
#include "armt/panel_io.hpp"

using namespace armt;
namespace fs = std::filesystem;

namespace {

RunConfig config_of(const std::string& text) {
    std::istringstream in(text);
    return RunConfig::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("armt_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    args.insert(args.begin(), "armt_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rc;
}

SimulatedPanel small_shift_panel(std::size_t N, double p, double sigma2, std::uint64_t seed) {
    MixtureScenario s;
    s.components = {{ArParams{0.5, 0.25}, 1.0}};
    s.N = N;
    s.T = 20;
    s.mean_shift = MeanShift{p, ShiftSource::constant, sigma2, {}};
    return generate_mixture_panel(s, seed);
}

} // namespace

TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("config parsing and fingerprints") {
    const auto c = config_of("# comment\nalpha = 1.5\n  component = 0.2 0.05 0.5 # trailing\ncomponent=0.95 0.5 0.5\n\nK=17\n");
    CHECK(c.get_double("alpha", 0) == 1.5);
    CHECK(c.get_int("K", 0) == 17);
    CHECK(c.get_all("component").size() == 2);
    CHECK(c.get_all("component")[1] == "0.95 0.5 0.5");
    CHECK(c.get("missing", "x") == "x");
    CHECK_THROWS_AS(c.get("component", ""), UsageError);
    CHECK_THROWS_AS(config_of("alpha 1.5\n"), UsageError);
    CHECK_THROWS_AS(config_of("= 3\n"), UsageError);
    CHECK_THROWS_AS(config_of("alpha = abc\n").get_double("alpha", 0), UsageError);
    CHECK_THROWS_AS(config_of("K = 2.5\n").get_int("K", 0), UsageError);
    CHECK_THROWS_AS(c.require_known({"alpha", "K"}), UsageError);
    CHECK_NOTHROW(c.require_known({"alpha", "K", "component"}));
    CHECK(config_of("phis = 0.2  0.95\n").get_doubles("phis") == std::vector<double>{0.2, 0.95});

    // Order of distinct keys does not matter; values and repeated-key order do.
    const auto a = config_of("x = 1\ny = 2\n"), b = config_of("y = 2\nx = 1\n"), d = config_of("x = 1\ny = 3\n");
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != d.fingerprint());
    CHECK(a.fingerprint().size() == 16);
    CHECK(config_of("x = 1\ny = 2\nthreads = 8\n").fingerprint({"threads"}) == a.fingerprint());
    CHECK(provenance_line(7, "abc") == "# seed=7 fingerprint=abc");
}

TEST_CASE("scenario files") {
    const auto m = simulate_scenario(config_of("N = 40\nT = 10\ncomponent = 0.2 0.05 0.5\ncomponent = 0.95 0.5 0.5\n"), 3);
    CHECK(m.panel.size() == 40);
    CHECK(std::count(m.truth.nonnull.begin(), m.truth.nonnull.end(), true) == 0);
    const auto g = simulate_scenario(config_of("N = 40\nT = 10\nphis = 0.2 0.95\nvs = 0.05 0.5\np_true = 0.5\nshift = gp\n"), 3);
    CHECK(std::count(g.truth.nonnull.begin(), g.truth.nonnull.end(), true) > 5);
    const auto ps = simulate_scenario(config_of("kind = prior_study\nN = 60\nT = 12\np_true = 0.2\nnoise_seed = 4\n"), 3);
    CHECK(ps.panel.size() == 60);
    CHECK(ps.panel.series[0].times.size() == 12);
    CHECK_THROWS_AS(simulate_scenario(config_of("kind = other\nN = 4\nT = 4\n"), 1), UsageError);
    CHECK_THROWS_AS(simulate_scenario(config_of("N = 4\nT = 4\n"), 1), UsageError);
    CHECK_THROWS_AS(simulate_scenario(config_of("N = 4\nT = 4\ncomponent = 0.5 0.2\n"), 1), UsageError);
    CHECK_THROWS_AS(simulate_scenario(config_of("N = 4\nT = 4\ncomponent = 0.5 0.2 1\ntypo = 3\n"), 1), UsageError);
}

TEST_CASE("mle_trajectory_set") {
    const auto sim = small_shift_panel(60, 0.4, 4.0, 2);
    auto config = default_hyperparameters(60);
    const auto one = run_chain(sim.panel, config, 3, 1, 5);
    const auto s1 = mle_trajectory_set(one, 1);
    REQUIRE(s1.atoms.size() == 1);
    CHECK(s1.atoms[0].weight == one.best_atoms[0].weight);
    CHECK(s1.source_sweep == 0);

    const auto chain = run_chain(sim.panel, config, 50, 100, 5);
    const auto s = mle_trajectory_set(chain, 17);
    CHECK(s.K == 17);
    CHECK(!s.warning);
    for (std::size_t j = 1; j < s.atoms.size(); ++j) CHECK(s.atoms[j].weight <= s.atoms[j - 1].weight);
    const auto big = mle_trajectory_set(chain, 10000);
    CHECK(big.warning.has_value());
    CHECK(big.K == chain.best_atoms.size());

    // Within-set weights scale back to the F-level weights.
    const auto frozen = s.frozen();
    const double alt = s.component_probs[1] + s.component_probs[2];
    for (std::size_t j = 0; j < s.atoms.size(); ++j) {
        const double pk = s.atoms[j].kind == TrajectoryKind::flat ? s.component_probs[1] : s.component_probs[2];
        CHECK(frozen.atoms[j].weight * pk / alt == doctest::Approx(s.atoms[j].weight).epsilon(1e-12));
    }

    // Selection is the same whatever the checkpoint stride.
    config.checkpoint_stride = 7;
    const auto strided = run_chain(sim.panel, config, 50, 100, 5);
    CHECK(mle_trajectory_set(strided, 17).source_sweep == s.source_sweep);
    CHECK(mle_trajectory_set(strided, 17).atoms[0].weight == s.atoms[0].weight);
}

TEST_CASE("frozen rerun: planted trajectories and untouched frozen atoms") {
    // Units 0..29 carry level +3, units 30..59 level -3, the rest are null.
    Engine rng = make_engine(41);
    SeriesPanel panel;
    for (int i = 0; i < 90; ++i) {
        ObservedSeries y{fmt::format("p{:02d}", i), {}, {}};
        const auto noise = simulate_ar1({0.5, 0.25}, 20, rng);
        const double level = i < 30 ? 3.0 : (i < 60 ? -3.0 : 0.0);
        for (int t = 0; t < 20; ++t) {
            y.times.push_back(t + 1);
            y.values.push_back(level + noise[t]);
        }
        panel.series.push_back(y);
    }
    MleTrajectorySet set;
    set.component_probs = {0.4, 0.5, 0.1};
    set.atoms = {TrajectoryAtom{TrajectoryKind::flat, 3.0, {}, 0.40}, TrajectoryAtom{TrajectoryKind::flat, -3.0, {}, 0.35}};
    set.K = 2;
    const auto before = set.atoms;
    MleTrajectorySet too_heavy = set;
    too_heavy.atoms[1].weight = 0.45;  // within-set weights would sum past 1
    CHECK_THROWS_AS(frozen_cluster_rerun(SeriesPanel{panel}, too_heavy, default_hyperparameters(90), 2, 2, 1), InvalidInput);
    auto config = default_hyperparameters(90);
    const auto table = frozen_cluster_rerun(panel, set, config, 100, 200, 3);
    CHECK(set.atoms[0].level == before[0].level);
    CHECK(set.atoms[1].weight == before[1].weight);
    REQUIRE(table.percent.size() == 90);
    int hit_a = 0, hit_b = 0, hit_null = 0;
    for (std::size_t i = 0; i < 90; ++i) {
        const auto& row = table.percent[i];
        REQUIRE(row.size() == 4);
        CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(100.0).epsilon(1e-12));
        if (i < 30) hit_a += row[0] > 50;
        else if (i < 60) hit_b += row[1] > 50;
        else hit_null += row[3] > 50;
    }
    MESSAGE("planted A " << hit_a << "/30, B " << hit_b << "/30, null " << hit_null << "/30");
    CHECK(hit_a >= 28);
    CHECK(hit_b >= 28);
    CHECK(hit_null >= 25);

    // Frozen atoms keep level and within-set weight on every sweep.
    config.checkpoint_stride = 1;
    config.top_atoms = 60;
    const auto frozen = set.frozen();
    const auto chain = run_chain(panel, config, 20, 50, 3, &frozen);
    for (const auto& cp : chain.sweeps) {
        const double alt = cp.component_probs[1] + cp.component_probs[2];
        const double scale = alt / cp.component_probs[1];
        int seen = 0;
        for (const auto& a : cp.top_atoms) {
            if (a.kind != TrajectoryKind::flat) continue;
            if (a.level == 3.0) {
                ++seen;
                CHECK(a.weight * scale == doctest::Approx(frozen.atoms[0].weight).epsilon(1e-12));
            }
            if (a.level == -3.0) {
                ++seen;
                CHECK(a.weight * scale == doctest::Approx(frozen.atoms[1].weight).epsilon(1e-12));
            }
        }
        CHECK(seen == 2);
    }

    const auto csv = membership_csv(table, "# seed=3 fingerprint=x");
    CHECK(csv.find("unit_id,cluster1,cluster2,other,null\n") != std::string::npos);
    const auto txt = membership_text(table);
    CHECK(txt.find("other") != std::string::npos);
}

TEST_CASE("report summaries and the fit record") {
    const auto sim = small_shift_panel(80, 0.3, 4.0, 9);
    const auto config = default_hyperparameters(80);
    const auto fit = fit_nonparametric(sim.panel, config, 150, 300, 2, 4);
    REQUIRE(fit.chains.size() == 2);
    CHECK(fit.chains[0].seed != fit.chains[1].seed);
    for (std::size_t i = 0; i < 80; ++i)
        CHECK(fit.inclusion[i] == doctest::Approx((fit.chains[0].inclusion[i] + fit.chains[1].inclusion[i]) / 2));

    const auto record = make_fit_record(fit, 4, "feed");
    const auto text = fit_record_json(record);
    const auto back = parse_fit_record(text);
    CHECK(fit_record_json(back) == text);
    CHECK(back.inclusion == record.inclusion);
    CHECK(back.chains[1].atoms.size() == record.chains[1].atoms.size());
    CHECK_THROWS_AS(parse_fit_record("{}"), InvalidInput);
    CHECK_THROWS_AS(parse_fit_record("not json"), InvalidInput);

    const std::vector<double> th{0.5, 0.9};
    const auto files = report_summaries(record, th);
    CHECK(files.inclusion.rfind("# seed=4 fingerprint=feed\nunit_id,p_i,flag50,flag90\n", 0) == 0);
    const auto k = std::count_if(record.inclusion.begin(), record.inclusion.end(), [](double p) { return p >= 0.5; });
    CHECK(files.discoveries.find(fmt::format("{} of 80 units flagged at p_i >= 0.5", k)) != std::string::npos);
    CHECK(files.discoveries.find("of 80 units flagged at p_i >= 0.9") != std::string::npos);

    // Null units: the 5-95% band covers zero everywhere.
    int covered = 0, nulls = 0;
    for (std::size_t i = 0; i < 80; ++i) {
        if (sim.truth.nonnull[i]) continue;
        ++nulls;
        bool all = true;
        for (const auto& q : record.bands.bands[i]) all = all && q[0] <= 0.0 && q[2] >= 0.0 && q[0] <= q[1] && q[1] <= q[2];
        covered += all;
    }
    MESSAGE("null units with zero-covering bands: " << covered << "/" << nulls);
    CHECK(covered >= 0.95 * nulls);
    CHECK(files.bands.find("unit_id,time,q05,q50,q95\n") != std::string::npos);
}

TEST_CASE("CLI: exit codes and messages") {
    TempDir dir("cli_codes");
    std::string out, err;
    CHECK(run({}, &out, &err) == 2);
    CHECK(run({"bogus"}) == 2);
    CHECK(run({"fit-parametric", "--input", (dir.path / "missing.csv").string()}, &out, &err) == 3);
    CHECK(err.find("missing.csv") != std::string::npos);
    CHECK(run({"fit-parametric"}, &out, &err) == 2);
    CHECK(run({"fit-np", "--input", "x.csv", "--burn", "abc"}) == 2);
    CHECK(run({"simulate"}, &out, &err) == 2);
    CHECK(run({"fit-parametric", "--input", "x.csv", "--threshold", "1.5"}) == 2);
    {
        std::ofstream bad(dir.path / "bad.csv");
        bad << "unit,time,value\n";
    }
    CHECK(run({"fit-parametric", "--input", (dir.path / "bad.csv").string()}, &out, &err) == 3);
    {
        std::ofstream cfg(dir.path / "c.cfg");
        cfg << "D = -1\n";
    }
    {
        std::ofstream p(dir.path / "p.csv");
        p << "unit_id,time,value\na,1,0.5\na,2,0.1\n";
    }
    CHECK(run({"fit-parametric", "--input", (dir.path / "p.csv").string(), "--config", (dir.path / "c.cfg").string()}) == 2);
    CHECK(run({"--help"}, &out) == 0);
}

TEST_CASE("CLI: every command is byte-deterministic") {
    TempDir dir("cli_determinism");
    const auto scen = dir.path / "s.cfg";
    {
        std::ofstream s(scen);
        s << "N = 60\nT = 15\nphis = 0.2 0.95\nvs = 0.05 0.5\np_true = 0.3\nshift_sigma2 = 4\n";
    }
    const auto cfg = dir.path / "np.cfg";
    {
        std::ofstream c(cfg);
        c << "K = 3\nband_draws = 20\n";
    }
    auto all = [&](const std::string& tag) {
        const auto o = dir.path / tag;
        REQUIRE(run({"simulate", "--scenario", scen.string(), "--seed", "7", "--output-dir", (o / "sim").string()}) == 0);
        const auto panel = (o / "sim" / "panel.csv").string();
        REQUIRE(run({"standardize", "--input", panel, "--output-dir", (o / "std").string()}) == 0);
        std::string out;
        REQUIRE(run({"fit-parametric", "--input", panel, "--seed", "3", "--output-dir", (o / "par").string()}, &out) == 0);
        CHECK(out.find("p_hat") != std::string::npos);
        REQUIRE(run({"fit-np", "--input", panel, "--seed", "3", "--burn", "30", "--keep", "40", "--chains", "2", "--config",
                     cfg.string(), "--output-dir", (o / "np").string()}) == 0);
        REQUIRE(run({"report", "--input", (o / "np" / "fit.json").string(), "--output-dir", (o / "rep").string()}) == 0);
        REQUIRE(run({"cluster-mle", "--input", panel, "--seed", "3", "--burn", "30", "--keep", "40", "--config", cfg.string(),
                     "--output-dir", (o / "cl").string()}) == 0);
        return o;
    };
    const auto a = all("a");
    const auto b = all("b");
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        const auto ta = slurp(e.path());
        CHECK_MESSAGE(ta == slurp(b / rel), rel.string());
        // Provenance is embedded in every output file.
        CHECK_MESSAGE(ta.find("fingerprint") != std::string::npos, rel.string());
        ++compared;
    }
    CHECK(compared == 15);
    const auto summary = slurp(a / "par" / "summary.txt");
    CHECK(summary.find("p_hat ") != std::string::npos);
    CHECK(summary.find("units flagged at p_i >= 0.5") != std::string::npos);

    // A different seed changes the simulated panel.
    REQUIRE(run({"simulate", "--scenario", scen.string(), "--seed", "8", "--output-dir", (dir.path / "c").string()}) == 0);
    CHECK(slurp(dir.path / "c" / "panel.csv") != slurp(a / "sim" / "panel.csv"));
}
