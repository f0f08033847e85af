#include "armt/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "armt/error.hpp"

namespace armt {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
    std::uint64_t h = mix64(seed);
    for (auto c : counters) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

double counter_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
    // 53 random bits, shifted by half an ulp so 0 is never returned.
    const std::uint64_t bits = derive_seed(seed, counters) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

Engine make_engine(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Engine(seq);
}

double draw_uniform(Engine& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double draw_normal(Engine& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double draw_gamma(Engine& rng, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) throw DomainError("gamma draw needs positive shape and scale");
    return std::gamma_distribution<double>(shape, scale)(rng);
}

double draw_beta(Engine& rng, double a, double b) {
    // Small shapes underflow both gammas; fall back to the log-space construction.
    const double x = draw_gamma(rng, a);
    const double y = draw_gamma(rng, b);
    if (x + y > 0.0) return x / (x + y);
    const double lx = std::log(draw_uniform(rng)) / a;
    const double ly = std::log(draw_uniform(rng)) / b;
    const double m = std::max(lx, ly);
    return std::exp(lx - m) / (std::exp(lx - m) + std::exp(ly - m));
}

double draw_inv_gamma(Engine& rng, double a, double b) {
    return b / draw_gamma(rng, a);
}

double draw_truncated_normal(Engine& rng, double mean, double var, double lo, double hi) {
    if (!(var > 0.0) || !(lo < hi)) throw DomainError("truncated normal needs var > 0 and lo < hi");
    const double sd = std::sqrt(var);
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
        const double x = mean + sd * draw_normal(rng);
        if (x > lo && x < hi) return x;
    }
    throw NumericalError("truncated normal rejection sampler exhausted its attempts");
}

std::vector<double> draw_dirichlet(Engine& rng, std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        out[k] = draw_gamma(rng, alpha[k]);
        total += out[k];
    }
    if (!(total > 0.0)) throw NumericalError("dirichlet draw underflowed");
    for (auto& x : out) x /= total;
    return out;
}

double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

std::size_t sample_log_categorical(std::span<const double> log_weights, double u) {
    if (log_weights.empty()) throw InvalidInput("categorical draw over an empty set");
    const double norm = log_sum_exp(log_weights);
    if (!std::isfinite(norm)) throw NumericalError("categorical draw with no finite weight");
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < log_weights.size(); ++k) {
        const double p = std::exp(log_weights[k] - norm);
        if (p > 0.0) last_positive = k;
        acc += p;
        if (u < acc) return k;
    }
    return last_positive;
}

} // namespace armt
