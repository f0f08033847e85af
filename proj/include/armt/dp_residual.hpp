#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "armt/ar_core.hpp"
#include "armt/parametric_test.hpp"
#include "armt/random.hpp"

namespace armt {

/// Read-only view of one series (times and values of equal length).
struct SeriesRef {
    std::span<const int> times;
    std::span<const double> values;
};

std::vector<SeriesRef> series_refs(const SeriesPanel& panel);

/// w_l = s_l * prod_{j<l}(1 - s_j); the last weight takes the remainder.
/// Returns sticks.size() + 1 weights summing to one.
std::vector<double> stick_weights(std::span<const double> sticks);

/// Inverse of stick_weights for the leading weights: s_l = w_l / (1 - sum_{j<l} w_j).
std::vector<double> sticks_from_weights(std::span<const double> leading_weights);

/// Blocked-Gibbs stick update s_l ~ Beta(1 + n_l, concentration + sum_{j>l} n_j)
/// for l >= first_free; sticks before first_free are held fixed.
void update_sticks(std::vector<double>& sticks, std::span<const std::size_t> counts, double concentration, Engine& rng,
                   std::size_t first_free = 0);

/// Truncated stick-breaking representation of the residual distribution G.
struct StickState {
    std::vector<double> sticks;   // L - 1
    std::vector<double> weights;  // L
    std::vector<ArParams> atoms;  // L

    std::size_t size() const { return atoms.size(); }
};

struct DpResidualState {
    StickState stick;
    std::vector<std::size_t> assignments;  // 0-based atom index per unit
    double alpha = 1.0;
    ParametricPrior base;

    // Metropolis proposal scale per atom on (atanh phi, log v), and adaptation counters.
    std::vector<double> log_step;
    std::vector<std::size_t> adapt_rounds;
    std::size_t mh_accepted = 0;
    std::size_t mh_proposed = 0;
};

struct ResidualSamplerOptions {
    /// Robbins-Monro adaptation of proposal scales (burn-in only).
    bool adapt = false;
    double target_acceptance = 0.25;
    int mh_steps = 1;
    unsigned threads = 0;

    // Test harness switches.
    bool freeze_assignments = false;
    bool freeze_phi = false;
    bool constant_likelihood = false;
};

/// Antoniak: E[#clusters] = sum_{i=0}^{n-1} alpha / (alpha + i).
double expected_clusters(double alpha, long long n);

/// Inverts expected_clusters in alpha by bisection on log alpha.
double elicit_concentration(double target_k, long long n);

/// Draw from the base measure: truncated-normal phi, inverse-gamma v.
ArParams draw_base_atom(const ParametricPrior& base, Engine& rng);

/// log G0 density on (atanh phi, log v), Jacobian included.
double log_base_density_unrestricted(double eta, double lambda, const ParametricPrior& base);

DpResidualState init_residual_state(const SeriesPanel& panel, double alpha, const ParametricPrior& base, int L,
                                    std::uint64_t seed);
DpResidualState init_residual_state(std::size_t n_units, double alpha, const ParametricPrior& base, int L,
                                    std::uint64_t seed);

/// One blocked-Gibbs sweep: assignments, sticks, then atoms (random-walk
/// Metropolis on (atanh phi, log v)); empty atoms are redrawn from the base.
void gibbs_sweep_residual(DpResidualState& state, std::span<const SeriesRef> residuals, SeedStream& stream,
                          const ResidualSamplerOptions& options = {});
void gibbs_sweep_residual(DpResidualState& state, const SeriesPanel& residual_panel, SeedStream& stream,
                          const ResidualSamplerOptions& options = {});

std::vector<std::size_t> cluster_counts(std::span<const std::size_t> assignments, std::size_t L);

/// One JSON line: sweep, weights, atoms, assignment histogram.
std::string residual_checkpoint_line(const DpResidualState& state, std::uint64_t sweep);

} // namespace armt
