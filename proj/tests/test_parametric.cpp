#include <doctest.h>

#include <chrono>
#include <cmath>

#include "armt/parametric_test.hpp"
#include "armt/simulation.hpp"
#include "oracles.hpp"

using namespace armt;

namespace {

SeriesPanel homogeneous_panel(double phi, double v, std::size_t N, int T, std::uint64_t seed) {
    MixtureScenario s;
    s.components = {{ArParams{phi, v}, 1.0}};
    s.N = N;
    s.T = T;
    return generate_mixture_panel(s, seed).panel;
}

WeightedDraws single_draw(double phi, double v, double p) {
    WeightedDraws d;
    d.draws = {{phi, v, p}};
    d.log_weights = {0.0};
    d.effective_sample_size = 1.0;
    return d;
}

} // namespace

TEST_CASE("single-draw inclusion equals the two-point posterior odds") {
    // y = 0 and sigma2 = 0 give BF = 1.
    SeriesPanel panel;
    panel.series = {ObservedSeries{"a", {1, 2, 3}, {0.0, 0.0, 0.0}}};
    ParametricPrior prior;
    prior.sigma2 = 0.0;
    auto s = inclusion_probabilities_parametric(single_draw(0.5, 1.0, 0.5), panel, prior);
    CHECK(s.p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.flags_50[0]);
    CHECK_FALSE(s.flags_90[0]);

    // Pick data with BF = 4 exactly is awkward; check the closed form on random data instead.
    std::mt19937_64 rng(1);
    std::normal_distribution<double> N(0.0, 1.5);
    prior.sigma2 = 1.0;
    for (int rep = 0; rep < 50; ++rep) {
        ObservedSeries y{"b", {}, {}};
        for (int t = 0; t < 25; ++t) {
            y.times.push_back(t);
            y.values.push_back(N(rng) + 0.3);
        }
        SeriesPanel one;
        one.series = {y};
        const double p = 0.05 + 0.9 * std::uniform_real_distribution<double>()(rng);
        const ArParams theta{0.6, 0.4};
        const double bf = std::exp(oracle::dense_mvn_logpdf(Eigen::Map<Eigen::VectorXd>(y.values.data(), 25),
                                                            oracle::ar1_cov(0.6, 0.4, y.times) + Eigen::MatrixXd::Ones(25, 25)) -
                                   oracle::dense_mvn_logpdf(Eigen::Map<Eigen::VectorXd>(y.values.data(), 25),
                                                            oracle::ar1_cov(0.6, 0.4, y.times)));
        const double exact = p * bf / (p * bf + 1 - p);
        const auto got = inclusion_probabilities_parametric(single_draw(theta.phi, theta.v, p), one, prior);
        CHECK(std::abs(got.p[0] - exact) < 1e-12);
    }
}

TEST_CASE("p=0.2 with BF=4 gives 0.5") {
    // Posterior odds algebra: 0.2*4 / (0.2*4 + 0.8) = 0.5.
    const double p = 0.2, bf = 4.0;
    CHECK(p * bf / (p * bf + 1 - p) == doctest::Approx(0.5));
}

TEST_CASE("inclusion is monotone in the Bayes factor and invariant to weight scaling") {
    const auto panel = homogeneous_panel(0.5, 0.25, 20, 30, 3);
    ParametricPrior prior;
    WeightedDraws d;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0, 1);
    for (int k = 0; k < 50; ++k) {
        d.draws.push_back({0.2 + 0.6 * U(rng), 0.1 + U(rng), 0.05 + 0.5 * U(rng)});
        d.log_weights.push_back(std::log(U(rng)));
    }
    const auto base = inclusion_probabilities_parametric(d, panel, prior);

    WeightedDraws scaled = d;
    for (auto& lw : scaled.log_weights) lw += 123.4;
    const auto s2 = inclusion_probabilities_parametric(scaled, panel, prior);
    for (std::size_t i = 0; i < base.p.size(); ++i) CHECK(s2.p[i] == doctest::Approx(base.p[i]).epsilon(1e-12));

    // Constant series y = c 1: every draw's BF grows with c, so p_i must too.
    SeriesPanel levels;
    for (int c = 0; c < 6; ++c) {
        ObservedSeries y{"c" + std::to_string(c), {}, {}};
        for (int t = 0; t < 20; ++t) {
            y.times.push_back(t);
            y.values.push_back(0.3 * c);
        }
        levels.series.push_back(y);
    }
    const auto s3 = inclusion_probabilities_parametric(d, levels, prior);
    for (std::size_t i = 1; i < s3.p.size(); ++i) CHECK(s3.p[i] >= s3.p[i - 1]);

    // Thread count does not change the result.
    const auto s4 = inclusion_probabilities_parametric(d, panel, prior, 3);
    CHECK(s4.p == base.p);
    CHECK(s4.mc_stderr == base.mc_stderr);
}

TEST_CASE("self-importance gives equal weights") {
    Eigen::Vector2d center{0.3, -1.0};
    Eigen::Matrix2d scale;
    scale << 1.0, 0.3, 0.3, 0.5;
    const StudentTProposal q(center, scale, 5.0);
    const auto sample = importance_sample([&](const Eigen::VectorXd& x) { return q.log_density(x); }, q, 2000, 42);
    for (double lw : sample.log_weights) CHECK(std::abs(lw) < 1e-12);
    CHECK(effective_sample_size(sample.log_weights) == doctest::Approx(2000.0).epsilon(1e-12));

    // Weighted E[p] (p = sigmoid of 1st coordinate) versus the plain average.
    WeightedDraws d;
    double plain = 0.0;
    for (std::size_t k = 0; k < sample.points.size(); ++k) {
        const double p = 1.0 / (1.0 + std::exp(-sample.points[k][0]));
        d.draws.push_back({0.0, 1.0, p});
        d.log_weights.push_back(sample.log_weights[k]);
        plain += p;
    }
    plain /= 2000.0;
    const auto w = d.normalized_weights();
    double weighted = 0.0, var = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) weighted += w[k] * d.draws[k].p;
    for (std::size_t k = 0; k < w.size(); ++k) var += (d.draws[k].p - plain) * (d.draws[k].p - plain);
    const double se = std::sqrt(var / 1999.0 / 2000.0);
    CHECK(std::abs(weighted - plain) < 3 * se + 1e-15);
}

TEST_CASE("student-t density integrates to one in 1-D") {
    Eigen::VectorXd c(1);
    c << 0.5;
    Eigen::MatrixXd s(1, 1);
    s << 2.0;
    const StudentTProposal q(c, s, 5.0);
    double total = 0.0;
    const double h = 0.01;
    for (double x = -200; x < 200; x += h) {
        Eigen::VectorXd v(1);
        v << x;
        total += std::exp(q.log_density(v)) * h;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("BFGS finds the maximum of a quadratic and reports failure") {
    const LogDensity f = [](const Eigen::VectorXd& x) { return -(x[0] - 1) * (x[0] - 1) - 3 * (x[1] + 2) * (x[1] + 2) - x[0] * x[1]; };
    const auto m = maximize_bfgs(f, Eigen::Vector2d{0, 0});
    // Stationary point: -2(x0-1) - x1 = 0, -6(x1+2) - x0 = 0.
    CHECK(m.argmax[0] == doctest::Approx(24.0 / 11.0).epsilon(1e-5));
    CHECK(m.argmax[1] == doctest::Approx(-26.0 / 11.0).epsilon(1e-5));
    const auto cov = laplace_covariance(f, m.argmax);
    // -H = [[2,1],[1,6]]; inverse determinant 11.
    CHECK(cov(0, 0) == doctest::Approx(6.0 / 11.0).epsilon(1e-4));
    CHECK(cov(0, 1) == doctest::Approx(-1.0 / 11.0).epsilon(1e-3));

    const LogDensity unbounded = [](const Eigen::VectorXd& x) { return x[0]; };
    try {
        maximize_bfgs(unbounded, Eigen::VectorXd::Zero(1), 20);
        FAIL("expected a mode search failure");
    } catch (const ModeSearchError& e) {
        CHECK(e.last_iterate.size() == 1);
        CHECK(e.last_iterate[0] > 0.0);
    }
}

TEST_CASE("posterior_p_mode") {
    WeightedDraws point;
    for (int k = 0; k < 200; ++k) {
        point.draws.push_back({0.5, 1.0, 0.3});
        point.log_weights.push_back(0.0);
    }
    CHECK(posterior_p_mode(point) == doctest::Approx(0.3).epsilon(1e-12));

    // Logit-normal draws: the KDE of a normal sample is normal with variance
    // s^2 + h^2, and the p-scale mode solves (x - mu) / s2 = 2 sigmoid(x) - 1.
    WeightedDraws ln;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> N(std::log(0.25), 0.4);
    for (int k = 0; k < 5000; ++k) {
        const double z = N(rng);
        ln.draws.push_back({0.0, 1.0, 1.0 / (1.0 + std::exp(-z))});
        ln.log_weights.push_back(0.0);
    }
    {
        const double mu = std::log(0.25), h = 0.9 * 0.4 * std::pow(5000.0, -0.2), s2 = 0.16 + h * h;
        double a = mu - 5, b = mu;
        for (int it = 0; it < 200; ++it) {
            const double x = 0.5 * (a + b);
            ((x - mu) / s2 - (2.0 / (1.0 + std::exp(-x)) - 1.0) < 0 ? a : b) = x;
        }
        const double expect = 1.0 / (1.0 + std::exp(-0.5 * (a + b)));
        MESSAGE("logit-normal p-mode " << posterior_p_mode(ln) << " vs " << expect);
        CHECK(posterior_p_mode(ln) == doctest::Approx(expect).epsilon(0.05));
        CHECK(posterior_p_mode(ln) < 0.2);
    }

    // Scaling weights leaves the mode unchanged.
    WeightedDraws shifted = ln;
    for (auto& lw : shifted.log_weights) lw -= 50.0;
    CHECK(posterior_p_mode(shifted) == doctest::Approx(posterior_p_mode(ln)).epsilon(1e-6));

    WeightedDraws degenerate = ln;
    degenerate.log_weights.assign(degenerate.log_weights.size(), -1e6);
    for (int k = 0; k < 5; ++k) degenerate.log_weights[k] = 0.0;
    CHECK_THROWS_AS(posterior_p_mode(degenerate), NumericalError);
}

TEST_CASE("classify_flags boundary is inclusive") {
    InclusionSummary s;
    s.p = {0.4, 0.5, 0.91};
    CHECK(classify_flags(s, 0.5) == std::vector<bool>{false, true, true});
    s.p = {0.9};
    CHECK(classify_flags(s, 0.9) == std::vector<bool>{true});
    s.p = {1.0, 0.999999, 0.3};
    CHECK(classify_flags(s, 1.0 - 1e-12) == std::vector<bool>{true, false, false});
}

TEST_CASE("importance sampler on a homogeneous null panel") {
    const auto panel = homogeneous_panel(0.5, 0.25, 200, 40, 17);
    const ParametricPrior prior;
    const auto t0 = std::chrono::steady_clock::now();
    const auto draws = build_importance_sampler(prior, panel, 2000, 5);
    const auto again = build_importance_sampler(prior, panel, 2000, 5);
    CHECK(draws.log_weights == again.log_weights);
    CHECK(draws.draws.size() == 2000);
    CHECK(draws.effective_sample_size <= 2000.0);
    CHECK(draws.effective_sample_size > 200.0);
    CHECK_FALSE(draws.warning.has_value());

    const auto mode = from_unrestricted(draws.mode);
    CHECK(mode.phi == doctest::Approx(0.5).epsilon(0.1));
    CHECK(mode.v == doctest::Approx(0.25).epsilon(0.1));
    const double p_hat = posterior_p_mode(draws);
    MESSAGE("p mode " << p_hat << " ESS " << draws.effective_sample_size << " in "
                      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << "s");
    CHECK(p_hat < 0.05);

    const auto summary = inclusion_probabilities_parametric(draws, panel, prior);
    int flagged = 0;
    for (bool f : summary.flags_50) flagged += f;
    CHECK(flagged <= 2);
    for (double se : summary.mc_stderr) CHECK(se < 0.05);

    CHECK_THROWS_AS(build_importance_sampler(prior, panel, 50, 1), InvalidInput);
    CHECK_THROWS_AS(build_importance_sampler(prior, SeriesPanel{}, 500, 1), InvalidInput);
}
