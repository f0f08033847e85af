#include "armt/simulation.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "armt/error.hpp"

namespace armt {

namespace {

std::size_t draw_component(std::span<const double> probs, double u) {
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return k;
    }
    return probs.size() - 1;
}

std::string unit_name(std::size_t i) {
    return fmt::format("u{:05d}", i);
}

} // namespace

void validate(const MixtureScenario& s) {
    if (s.components.empty()) throw InvalidInput("scenario has no components");
    double total = 0.0;
    for (const auto& [theta, prob] : s.components) {
        validate(theta);
        if (!(prob >= 0.0)) throw InvalidInput("component probabilities must be nonnegative");
        total += prob;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInput(fmt::format("component probabilities sum to {}, not 1", total));
    if (s.N == 0 || s.T <= 0) throw InvalidInput("scenario needs positive N and T");
    if (s.mean_shift) {
        if (!(s.mean_shift->p_true >= 0.0 && s.mean_shift->p_true <= 1.0)) throw InvalidInput("p_true must lie in [0, 1]");
        if (!(s.mean_shift->sigma2 >= 0.0)) throw InvalidInput("mean-shift variance must be nonnegative");
        if (s.mean_shift->source == ShiftSource::gp) validate(s.mean_shift->kernel);
    }
}

std::vector<std::pair<ArParams, double>> grid_components(std::span<const double> phis, std::span<const double> vs) {
    std::vector<std::pair<ArParams, double>> out;
    const double p = 1.0 / static_cast<double>(phis.size() * vs.size());
    for (double phi : phis)
        for (double v : vs) out.push_back({ArParams{phi, v}, p});
    return out;
}

std::vector<double> simulate_ar1(const ArParams& theta, int T, Engine& rng) {
    std::vector<double> y(T);
    const double sd = std::sqrt(theta.v);
    y[0] = std::sqrt(theta.v / (1.0 - theta.phi * theta.phi)) * draw_normal(rng);
    for (int t = 1; t < T; ++t) y[t] = theta.phi * y[t - 1] + sd * draw_normal(rng);
    return y;
}

SimulatedPanel generate_mixture_panel(const MixtureScenario& scenario, std::uint64_t seed) {
    validate(scenario);
    std::vector<double> probs;
    for (const auto& c : scenario.components) probs.push_back(c.second);

    std::vector<int> times(scenario.T);
    std::iota(times.begin(), times.end(), scenario.start_time);
    std::optional<GpFactor> factor;
    if (scenario.mean_shift && scenario.mean_shift->source == ShiftSource::gp) factor = factor_gp(scenario.mean_shift->kernel, times);

    SimulatedPanel out;
    out.truth.nonnull.resize(scenario.N);
    out.truth.component.resize(scenario.N);
    std::vector<ObservedSeries> series(scenario.N);
    for (std::size_t i = 0; i < scenario.N; ++i) {
        Engine rng = make_engine(derive_seed(seed, {i}));
        const std::size_t c = draw_component(probs, draw_uniform(rng));
        series[i].unit_id = unit_name(i);
        series[i].times = times;
        series[i].values = simulate_ar1(scenario.components[c].first, scenario.T, rng);
        out.truth.component[i] = static_cast<int>(c);
        if (scenario.mean_shift && draw_uniform(rng) < scenario.mean_shift->p_true) {
            out.truth.nonnull[i] = true;
            if (factor) {
                const auto atom = sample_trajectory_atom(*factor, rng);
                for (int t = 0; t < scenario.T; ++t) series[i].values[t] += atom.path[t];
            } else {
                const double m = std::sqrt(scenario.mean_shift->sigma2) * draw_normal(rng);
                for (auto& x : series[i].values) x += m;
            }
        }
    }
    out.panel = admit_panel(std::move(series), 1);
    return out;
}

double marginal_variance(const StickState& g) {
    if (g.weights.size() != g.atoms.size()) throw InvalidInput("residual law needs one weight per atom");
    double total = 0.0;
    for (std::size_t l = 0; l < g.atoms.size(); ++l) total += g.weights[l] * stationary_variance(g.atoms[l]);
    return total;
}

StickState scale_to_marginal_variance(StickState g, double target) {
    if (!(target > 0.0)) throw DomainError(fmt::format("target variance must be positive, got {}", target));
    const double c = target / marginal_variance(g);
    for (auto& a : g.atoms) a.v *= c;
    return g;
}

SimulatedPanel generate_prior_study(double p_true, const StickState& residual_g, std::size_t N, const TimeGrid& grid,
                                    const GpKernelParams& kernel, double nu, int truncation, std::uint64_t seed,
                                    std::uint64_t noise_seed) {
    if (!(p_true >= 0.0 && p_true < 1.0)) throw DomainError("p_true must lie in [0, 1)");
    if (!(nu > 0.0) || truncation < 1) throw DomainError("trajectory DP needs nu > 0 and truncation >= 1");
    if (N == 0 || grid.size() == 0) throw InvalidInput("prior study needs N > 0 and a nonempty grid");
    if (residual_g.atoms.empty() || residual_g.weights.size() != residual_g.atoms.size()) {
        throw InvalidInput("residual distribution has no atoms");
    }
    const GpFactor factor = factor_gp(kernel, grid.times);
    const int T = static_cast<int>(grid.size());

    // F: truncated stick-breaking draw, trajectories shared by every unit that picks an atom.
    Engine frng = make_engine(derive_seed(seed, {0xF0}));
    std::vector<double> sticks(static_cast<std::size_t>(truncation - 1));
    for (auto& s : sticks) s = draw_beta(frng, 1.0, nu);
    const auto f_weights = stick_weights(sticks);
    std::vector<TrajectoryAtom> f_atoms;
    f_atoms.reserve(f_weights.size());
    for (std::size_t l = 0; l < f_weights.size(); ++l) f_atoms.push_back(sample_trajectory_atom(factor, frng));

    SimulatedPanel out;
    out.truth.nonnull.resize(N);
    out.truth.component.resize(N);
    std::vector<ObservedSeries> series(N);
    for (std::size_t i = 0; i < N; ++i) {
        Engine noise = make_engine(derive_seed(noise_seed, {i}));
        const std::size_t c = draw_component(residual_g.weights, draw_uniform(noise));
        series[i].unit_id = unit_name(i);
        series[i].times = grid.times;
        series[i].values = simulate_ar1(residual_g.atoms[c], T, noise);
        out.truth.component[i] = static_cast<int>(c);

        Engine signal = make_engine(derive_seed(seed, {i}));
        if (draw_uniform(signal) < p_true) {
            out.truth.nonnull[i] = true;
            const auto& atom = f_atoms[draw_component(f_weights, draw_uniform(signal))];
            for (int t = 0; t < T; ++t) series[i].values[t] += atom.path[t];
        }
    }
    out.panel = admit_panel(std::move(series), 1);
    return out;
}

double ErrorReport::fdr() const {
    const std::size_t d = discoveries();
    return d == 0 ? 0.0 : static_cast<double>(false_positives) / static_cast<double>(d);
}

ErrorReport error_report(const std::vector<bool>& flags, const TruthLabels& truth) {
    if (flags.size() != truth.nonnull.size()) {
        throw InvalidInput(fmt::format("error report: {} flags but {} truth labels", flags.size(), truth.nonnull.size()));
    }
    ErrorReport r;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) {
            ++(truth.nonnull[i] ? r.true_positives : r.false_positives);
        } else {
            ++(truth.nonnull[i] ? r.false_negatives : r.true_negatives);
        }
    }
    return r;
}

std::vector<ErrorReport> error_reports(std::span<const double> inclusion, const TruthLabels& truth,
                                       std::span<const double> thresholds) {
    std::vector<ErrorReport> out;
    for (double th : thresholds) {
        std::vector<bool> flags(inclusion.size());
        for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = inclusion[i] >= th;
        auto r = error_report(flags, truth);
        r.threshold = th;
        out.push_back(r);
    }
    return out;
}

} // namespace armt
