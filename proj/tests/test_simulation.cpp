#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "armt/simulation.hpp"
#include "oracles.hpp"

using namespace armt;

TEST_CASE("simulated AR(1) paths have the target moments") {
    Engine rng = make_engine(1);
    double num = 0, den = 0, sum = 0, sq = 0;
    std::size_t n = 0;
    for (int u = 0; u < 3500; ++u) {
        const auto y = simulate_ar1({0.5, 0.25}, 40, rng);
        for (std::size_t t = 0; t < y.size(); ++t) {
            sum += y[t];
            sq += y[t] * y[t];
            ++n;
            if (t > 0) num += y[t] * y[t - 1];
            if (t > 0) den += y[t - 1] * y[t - 1];
        }
    }
    CHECK(num / den == doctest::Approx(0.5).epsilon(0.04));
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(var == doctest::Approx(0.25 / 0.75).epsilon(0.03));
}

TEST_CASE("tiny innovation variance gives a near-constant path") {
    Engine rng = make_engine(2);
    const auto y = simulate_ar1({0.5, 1e-12}, 50, rng);
    for (double x : y) CHECK(std::abs(x) < 1e-4);
}

TEST_CASE("mixture components are drawn with their probabilities") {
    const std::vector<double> phis{0.2, 0.5, 0.95}, vs{0.05, 0.25, 0.5};
    MixtureScenario s;
    s.components = grid_components(phis, vs);
    REQUIRE(s.components.size() == 9);
    for (const auto& c : s.components) CHECK(c.second == doctest::Approx(1.0 / 9));
    s.N = 4500;
    s.T = 5;
    const auto sim = generate_mixture_panel(s, 3);
    std::vector<int> counts(9, 0);
    for (int c : sim.truth.component) ++counts[c];
    double chi2 = 0;
    for (int c : counts) chi2 += (c - 500.0) * (c - 500.0) / 500.0;
    const double p = 1.0 - boost::math::cdf(boost::math::chi_squared(8), chi2);
    MESSAGE("chi-square p-value " << p);
    CHECK(p > 0.01);
    CHECK(sim.panel.series[0].unit_id == "u00000");
    CHECK(sim.panel.series[0].times.front() == 1);
    CHECK(sim.panel.series[0].times.back() == 5);
}

TEST_CASE("generation is deterministic and order independent") {
    MixtureScenario s;
    s.components = {{ArParams{0.5, 0.25}, 1.0}};
    s.N = 50;
    s.T = 10;
    s.mean_shift = MeanShift{0.3, ShiftSource::gp, 1.0, {}};
    const auto a = generate_mixture_panel(s, 9);
    const auto b = generate_mixture_panel(s, 9);
    s.N = 80;
    const auto c = generate_mixture_panel(s, 9);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(a.panel.series[i].values == b.panel.series[i].values);
        CHECK(a.panel.series[i].values == c.panel.series[i].values);
        CHECK(a.truth.nonnull[i] == c.truth.nonnull[i]);
    }
    const auto d = generate_mixture_panel(s, 10);
    CHECK(d.panel.series[0].values != c.panel.series[0].values);
}

TEST_CASE("scenario validation") {
    MixtureScenario s;
    s.N = 10;
    s.T = 5;
    CHECK_THROWS_AS(validate(s), InvalidInput);
    s.components = {{ArParams{0.5, 0.25}, 0.6}};
    CHECK_THROWS_AS(validate(s), InvalidInput);
    s.components = {{ArParams{1.5, 0.25}, 1.0}};
    CHECK_THROWS(validate(s));
}

TEST_CASE("prior study nonnull counts") {
    const auto g = init_residual_state(1, 1.0, ParametricPrior{}, 60, 5).stick;
    TimeGrid grid{1, {}};
    for (int t = 1; t <= 40; ++t) grid.times.push_back(t);
    for (double p : {1.0 / 5.0, 1.0 / 55.0}) {
        const auto sim = generate_prior_study(p, g, 5500, grid, GpKernelParams{}, 2.0, 60, 4, 8);
        const auto k = std::count(sim.truth.nonnull.begin(), sim.truth.nonnull.end(), true);
        const double mean = 5500 * p, sd = std::sqrt(5500 * p * (1 - p));
        MESSAGE("p = " << p << ": " << k << " nonnull");
        CHECK(std::abs(k - mean) < 3 * sd);
    }
    // Shared noise: null units coincide between studies with different p.
    const auto a = generate_prior_study(0.2, g, 200, grid, GpKernelParams{}, 2.0, 60, 4, 8);
    const auto b = generate_prior_study(0.0, g, 200, grid, GpKernelParams{}, 2.0, 60, 4, 8);
    for (std::size_t i = 0; i < 200; ++i)
        if (!a.truth.nonnull[i]) CHECK(a.panel.series[i].values == b.panel.series[i].values);
    // Nonnull units share trajectories drawn from F; a - b recovers them.
    std::set<std::vector<double>> paths;
    std::size_t n_alt = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        if (!a.truth.nonnull[i]) continue;
        ++n_alt;
        std::vector<double> d(40);
        for (int t = 0; t < 40; ++t) d[t] = std::round(1e6 * (a.panel.series[i].values[t] - b.panel.series[i].values[t]));
        paths.insert(d);
    }
    MESSAGE(n_alt << " nonnull units, " << paths.size() << " distinct trajectories");
    CHECK(n_alt > 20);
    CHECK(paths.size() < n_alt / 2);
    CHECK_THROWS_AS(generate_prior_study(1.0, g, 10, grid, GpKernelParams{}, 2.0, 60, 1, 1), DomainError);
}

TEST_CASE("residual law scaling") {
    auto g = init_residual_state(1, 1.5, ParametricPrior{}, 30, 12).stick;
    const auto scaled = scale_to_marginal_variance(g, 1.0);
    CHECK(marginal_variance(scaled) == doctest::Approx(1.0).epsilon(1e-12));
    const double c = scaled.atoms[0].v / g.atoms[0].v;
    for (std::size_t l = 0; l < g.atoms.size(); ++l) {
        CHECK(scaled.atoms[l].phi == g.atoms[l].phi);
        CHECK(scaled.atoms[l].v / g.atoms[l].v == doctest::Approx(c).epsilon(1e-12));
        CHECK(scaled.weights[l] == g.weights[l]);
    }
    StickState two;
    two.weights = {0.25, 0.75};
    two.atoms = {ArParams{0.0, 1.0}, ArParams{0.5, 0.75}};
    CHECK(marginal_variance(two) == doctest::Approx(0.25 + 0.75).epsilon(1e-15));
    CHECK_THROWS_AS(scale_to_marginal_variance(two, 0.0), DomainError);
}

TEST_CASE("error reports") {
    TruthLabels truth;
    std::vector<bool> flags;
    for (int i = 0; i < 321; ++i) {
        flags.push_back(true);
        truth.nonnull.push_back(i >= 24);
    }
    for (int i = 0; i < 100; ++i) {
        flags.push_back(false);
        truth.nonnull.push_back(i < 10);
    }
    const auto r = error_report(flags, truth);
    CHECK(r.discoveries() == 321);
    CHECK(r.false_positives == 24);
    CHECK(r.false_negatives == 10);
    CHECK(r.true_negatives == 90);
    CHECK(r.fdr() == doctest::Approx(24.0 / 321.0));
    CHECK(r.fdr() == doctest::Approx(0.0748).epsilon(1e-3));

    TruthLabels t2;
    std::vector<double> incl;
    for (int i = 0; i < 26; ++i) {
        incl.push_back(0.95);
        t2.nonnull.push_back(i >= 2);
    }
    incl.push_back(0.2);
    t2.nonnull.push_back(true);
    const std::vector<double> th{0.5, 0.99};
    const auto rs = error_reports(incl, t2, th);
    CHECK(rs[0].fdr() == doctest::Approx(2.0 / 26.0));
    CHECK(rs[1].discoveries() == 0);
    CHECK(rs[1].fdr() == 0.0);

    CHECK_THROWS_AS(error_report(std::vector<bool>(3, true), t2), InvalidInput);
}
