#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "armt/ar_core.hpp"
#include "armt/dp_residual.hpp"
#include "armt/fdp_trajectory.hpp"

namespace armt {

enum class ShiftSource { constant, gp };

/// Nonnull units (probability p_true) get a constant N(0, sigma2) mean or a GP trajectory.
struct MeanShift {
    double p_true = 0.0;
    ShiftSource source = ShiftSource::constant;
    double sigma2 = 1.0;
    GpKernelParams kernel;
};

struct MixtureScenario {
    std::vector<std::pair<ArParams, double>> components;  // (theta, probability)
    std::size_t N = 0;
    int T = 0;
    int start_time = 1;
    std::optional<MeanShift> mean_shift;
};

void validate(const MixtureScenario& scenario);

/// Equiprobable components over the Cartesian product phis x vs.
std::vector<std::pair<ArParams, double>> grid_components(std::span<const double> phis, std::span<const double> vs);

struct TruthLabels {
    std::vector<bool> nonnull;
    std::vector<int> component;
};

struct SimulatedPanel {
    SeriesPanel panel;
    TruthLabels truth;
};

/// Stationary AR(1) path of length T (initial state from the stationary law).
std::vector<double> simulate_ar1(const ArParams& theta, int T, Engine& rng);

/// Unit i is generated from its own derived seed, so the output does not
/// depend on generation order.
SimulatedPanel generate_mixture_panel(const MixtureScenario& scenario, std::uint64_t seed);

/// Mixture-weighted stationary variance sum_l w_l v_l / (1 - phi_l^2).
double marginal_variance(const StickState& g);
/// Multiplies every atom's v by one factor so marginal_variance(g) == target.
StickState scale_to_marginal_variance(StickState g, double target);

/// Prior-predictive study: Bernoulli(p_true) nonnull labels; nonnull units take
/// their trajectory from F ~ DP(nu, GP) (truncated, drawn afresh from `seed`),
/// so units share trajectories. Every unit gets AR(1) noise drawn from
/// residual_g (from `noise_seed`, so noise vectors are shared across studies).
SimulatedPanel generate_prior_study(double p_true, const StickState& residual_g, std::size_t N, const TimeGrid& grid,
                                    const GpKernelParams& kernel, double nu, int truncation, std::uint64_t seed,
                                    std::uint64_t noise_seed);

struct ErrorReport {
    double threshold = 0.5;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t true_negatives = 0;
    std::size_t false_negatives = 0;

    std::size_t discoveries() const { return true_positives + false_positives; }
    /// FP / (FP + TP), zero when there are no discoveries.
    double fdr() const;
};

ErrorReport error_report(const std::vector<bool>& flags, const TruthLabels& truth);
std::vector<ErrorReport> error_reports(std::span<const double> inclusion, const TruthLabels& truth,
                                       std::span<const double> thresholds);

} // namespace armt
