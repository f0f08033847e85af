#include "armt/dp_residual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "armt/error.hpp"
#include "armt/parallel.hpp"

namespace armt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kStageAssign = 1;

double log_sech2(double x) {
    const double ax = std::abs(x);
    return std::log(4.0) - 2.0 * ax - 2.0 * std::log1p(std::exp(-2.0 * ax));
}

} // namespace

std::vector<SeriesRef> series_refs(const SeriesPanel& panel) {
    std::vector<SeriesRef> refs;
    refs.reserve(panel.size());
    for (const auto& s : panel.series) refs.push_back({s.times, s.values});
    return refs;
}

std::vector<double> stick_weights(std::span<const double> sticks) {
    std::vector<double> w(sticks.size() + 1);
    double remaining = 1.0;
    for (std::size_t l = 0; l < sticks.size(); ++l) {
        w[l] = sticks[l] * remaining;
        remaining *= 1.0 - sticks[l];
    }
    w.back() = remaining;
    return w;
}

std::vector<double> sticks_from_weights(std::span<const double> leading_weights) {
    std::vector<double> sticks(leading_weights.size());
    double total = 0.0;
    for (double w : leading_weights) {
        if (!(w >= 0.0)) throw InvalidInput(fmt::format("stick weights must be nonnegative, got {}", w));
        total += w;
    }
    if (total > 1.0 + 1e-9) throw InvalidInput(fmt::format("leading stick weights sum to {} > 1", total));
    double used = 0.0;
    for (std::size_t l = 0; l < leading_weights.size(); ++l) {
        const double rest = 1.0 - used;
        sticks[l] = rest > 0.0 ? std::clamp(leading_weights[l] / rest, 0.0, 1.0) : 0.0;
        used += leading_weights[l];
    }
    return sticks;
}

void update_sticks(std::vector<double>& sticks, std::span<const std::size_t> counts, double concentration, Engine& rng,
                   std::size_t first_free) {
    if (counts.size() != sticks.size() + 1) throw InvalidInput("stick update: counts must have one more entry than sticks");
    std::size_t tail = 0;
    for (std::size_t l = first_free + 1; l < counts.size(); ++l) tail += counts[l];
    for (std::size_t l = first_free; l < sticks.size(); ++l) {
        sticks[l] = std::clamp(draw_beta(rng, 1.0 + static_cast<double>(counts[l]), concentration + static_cast<double>(tail)),
                               0.0, 1.0);
        tail -= counts[l + 1];
    }
}

double expected_clusters(double alpha, long long n) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError(fmt::format("concentration must be positive, got {}", alpha));
    if (n < 1) throw DomainError("expected_clusters needs n >= 1");
    double k = 0.0;
    for (long long i = 0; i < n; ++i) k += alpha / (alpha + static_cast<double>(i));
    return k;
}

double elicit_concentration(double target_k, long long n) {
    if (n < 2 || !(target_k > 1.0) || !(target_k < static_cast<double>(n))) {
        throw InvalidInput(fmt::format("target cluster count must lie in (1, {}), got {}", n, target_k));
    }
    double lo = -60.0, hi = 60.0;
    if (expected_clusters(std::exp(lo), n) > target_k || expected_clusters(std::exp(hi), n) < target_k) {
        throw InvalidInput("target cluster count is outside the representable range of alpha");
    }
    for (int it = 0; it < 400 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (expected_clusters(std::exp(mid), n) < target_k) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return std::exp(0.5 * (lo + hi));
}

ArParams draw_base_atom(const ParametricPrior& base, Engine& rng) {
    ArParams theta;
    theta.phi = draw_truncated_normal(rng, base.d, base.D, -1.0, 1.0);
    theta.v = draw_inv_gamma(rng, base.a, base.b);
    return theta;
}

double log_base_density_unrestricted(double eta, double lambda, const ParametricPrior& base) {
    const double phi = std::tanh(eta);
    const double v = std::exp(lambda);
    if (!(std::abs(phi) < 1.0) || !(v > 0.0) || !std::isfinite(v)) return kNegInf;
    return log_truncated_normal_phi(phi, base) + log_sech2(eta) + log_inv_gamma(v, base.a, base.b) + lambda;
}

DpResidualState init_residual_state(std::size_t n_units, double alpha, const ParametricPrior& base, int L,
                                    std::uint64_t seed) {
    if (L < 2) throw InvalidInput("truncation level must be at least 2");
    if (!(alpha > 0.0)) throw DomainError("concentration must be positive");
    validate(base);
    Engine rng = make_engine(seed);
    DpResidualState st;
    st.alpha = alpha;
    st.base = base;
    st.stick.sticks.resize(L - 1);
    for (auto& s : st.stick.sticks) s = draw_beta(rng, 1.0, alpha);
    st.stick.weights = stick_weights(st.stick.sticks);
    st.stick.atoms.resize(L);
    for (auto& a : st.stick.atoms) a = draw_base_atom(base, rng);
    st.assignments.resize(n_units);
    std::vector<double> logw(L);
    for (int l = 0; l < L; ++l) logw[l] = st.stick.weights[l] > 0 ? std::log(st.stick.weights[l]) : kNegInf;
    for (auto& z : st.assignments) z = sample_log_categorical(logw, draw_uniform(rng));
    st.log_step.assign(L, std::log(0.3));
    st.adapt_rounds.assign(L, 0);
    return st;
}

DpResidualState init_residual_state(const SeriesPanel& panel, double alpha, const ParametricPrior& base, int L,
                                    std::uint64_t seed) {
    return init_residual_state(panel.size(), alpha, base, L, seed);
}

std::vector<std::size_t> cluster_counts(std::span<const std::size_t> assignments, std::size_t L) {
    std::vector<std::size_t> counts(L, 0);
    for (auto z : assignments) ++counts.at(z);
    return counts;
}

void gibbs_sweep_residual(DpResidualState& state, std::span<const SeriesRef> residuals, SeedStream& stream,
                          const ResidualSamplerOptions& options) {
    const std::size_t L = state.stick.size();
    const std::size_t N = residuals.size();
    if (state.assignments.size() != N) throw InvalidInput("residual state and panel disagree on the number of units");
    auto& atoms = state.stick.atoms;

    // (a) assignments against an immutable snapshot of weights and atoms.
    if (!options.freeze_assignments) {
        std::vector<double> log_w(L);
        for (std::size_t l = 0; l < L; ++l) log_w[l] = state.stick.weights[l] > 0 ? std::log(state.stick.weights[l]) : kNegInf;
        parallel_for(
            N,
            [&](std::size_t i) {
                std::vector<double> lp(L);
                for (std::size_t l = 0; l < L; ++l) {
                    if (log_w[l] == kNegInf) {
                        lp[l] = kNegInf;
                        continue;
                    }
                    const double ll =
                        options.constant_likelihood ? 0.0 : ar1_loglik_unchecked(residuals[i].times, residuals[i].values, atoms[l]);
                    if (!std::isfinite(ll)) {
                        throw NumericalError(fmt::format("residual assignment: non-finite log-likelihood for unit {} under atom {}", i, l));
                    }
                    lp[l] = log_w[l] + ll;
                }
                state.assignments[i] = sample_log_categorical(lp, stream.unit_uniform(kStageAssign, i));
            },
            options.threads);
    }

    // (b) sticks.
    const auto counts = cluster_counts(state.assignments, L);
    Engine& rng = stream.engine();
    update_sticks(state.stick.sticks, counts, state.alpha, rng);
    state.stick.weights = stick_weights(state.stick.sticks);

    // (c) atoms.
    std::vector<std::vector<std::size_t>> members(L);
    for (std::size_t i = 0; i < N; ++i) members[state.assignments[i]].push_back(i);
    auto cluster_loglik = [&](std::size_t l, const ArParams& theta) {
        if (options.constant_likelihood) return 0.0;
        double total = 0.0;
        for (auto i : members[l]) total += ar1_loglik_unchecked(residuals[i].times, residuals[i].values, theta);
        return total;
    };

    for (std::size_t l = 0; l < L; ++l) {
        if (members[l].empty()) {
            atoms[l] = draw_base_atom(state.base, rng);
            continue;
        }
        double eta = std::atanh(atoms[l].phi);
        double lambda = std::log(atoms[l].v);
        double current = log_base_density_unrestricted(eta, lambda, state.base) + cluster_loglik(l, atoms[l]);
        if (!std::isfinite(current)) {
            throw NumericalError(fmt::format("residual atom {}: non-finite conditional log-likelihood", l));
        }
        for (int step = 0; step < options.mh_steps; ++step) {
            const double scale = std::exp(state.log_step[l]);
            const double eta_new = options.freeze_phi ? eta : eta + scale * draw_normal(rng);
            const double lambda_new = lambda + scale * draw_normal(rng);
            const ArParams proposal{std::tanh(eta_new), std::exp(lambda_new)};
            double candidate = log_base_density_unrestricted(eta_new, lambda_new, state.base);
            if (std::isfinite(candidate) && std::abs(proposal.phi) < 1.0 && proposal.v > 0.0 && std::isfinite(proposal.v)) {
                candidate += cluster_loglik(l, proposal);
            } else {
                candidate = kNegInf;
            }
            const double log_ratio = candidate - current;
            const bool accept = std::isfinite(candidate) && std::log(draw_uniform(rng)) < log_ratio;
            ++state.mh_proposed;
            if (accept) {
                ++state.mh_accepted;
                eta = eta_new;
                lambda = lambda_new;
                current = candidate;
                atoms[l] = proposal;
            }
            if (options.adapt) {
                const double rate = std::min(1.0, std::exp(std::isfinite(log_ratio) ? log_ratio : -1e300));
                const double gain = 1.0 / std::pow(static_cast<double>(++state.adapt_rounds[l]) + 1.0, 0.6);
                state.log_step[l] = std::clamp(state.log_step[l] + gain * (rate - options.target_acceptance), -8.0, 2.0);
            }
        }
    }
}

void gibbs_sweep_residual(DpResidualState& state, const SeriesPanel& residual_panel, SeedStream& stream,
                          const ResidualSamplerOptions& options) {
    const auto refs = series_refs(residual_panel);
    gibbs_sweep_residual(state, refs, stream, options);
}

std::string residual_checkpoint_line(const DpResidualState& state, std::uint64_t sweep) {
    nlohmann::json rec;
    rec["sweep"] = sweep;
    rec["alpha"] = state.alpha;
    rec["weights"] = state.stick.weights;
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : state.stick.atoms) atoms.push_back({a.phi, a.v});
    rec["atoms"] = atoms;
    rec["histogram"] = cluster_counts(state.assignments, state.stick.size());
    return rec.dump();
}

} // namespace armt
