#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace armt {

using Engine = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix64(std::uint64_t x);

/// Combines a base seed with a list of counters into a new 64-bit seed.
/// Distinct counter tuples give statistically independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters);

/// Counter-based uniform on (0,1): a pure function of its key, so draws made
/// inside parallel loops do not depend on evaluation order.
double counter_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> counters);

Engine make_engine(std::uint64_t seed);

double draw_uniform(Engine& rng);
double draw_normal(Engine& rng);
double draw_gamma(Engine& rng, double shape, double scale = 1.0);
double draw_beta(Engine& rng, double a, double b);
/// Inverse-gamma with shape a and scale b (density ∝ x^{-a-1} e^{-b/x}).
double draw_inv_gamma(Engine& rng, double a, double b);
/// Normal(mean, var) truncated to (lo, hi), by rejection.
double draw_truncated_normal(Engine& rng, double mean, double var, double lo, double hi);
std::vector<double> draw_dirichlet(Engine& rng, std::span<const double> alpha);

/// Index sampled with probability ∝ exp(log_weights[k]) using the supplied
/// uniform in (0,1). Entries equal to -inf have zero probability.
std::size_t sample_log_categorical(std::span<const double> log_weights, double u);

/// log(sum(exp(x))) without overflow.
double log_sum_exp(std::span<const double> x);

} // namespace armt

namespace armt {

/// Per-chain randomness. Sequential stages draw from `engine()`, which is
/// reseeded at every sweep; stages that run in parallel over units draw a
/// counter-based uniform keyed by (sweep, stage, unit).
class SeedStream {
public:
    explicit SeedStream(std::uint64_t seed) : seed_(seed), engine_(make_engine(derive_seed(seed, {0}))) {}

    void next_sweep() {
        ++sweep_;
        engine_ = make_engine(derive_seed(seed_, {sweep_}));
    }
    double unit_uniform(std::uint64_t stage, std::uint64_t unit) const {
        return counter_uniform(seed_, {sweep_, stage, unit});
    }
    Engine& engine() { return engine_; }
    std::uint64_t sweep() const { return sweep_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t sweep_ = 0;
    Engine engine_;
};

} // namespace armt
