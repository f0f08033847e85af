#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "armt/ar_core.hpp"
#include "armt/dp_residual.hpp"
#include "armt/parametric_test.hpp"
#include "armt/random.hpp"

namespace armt {

/// Squared-exponential kernel C(t1, t2) = kappa1 * exp(-0.5 * ((t1 - t2) / kappa2)^2).
struct GpKernelParams {
    double kappa1 = 1.25;
    double kappa2 = 13.0;
};

void validate(const GpKernelParams& kernel);

/// Raw kernel matrix over the given (strictly increasing) times, no jitter.
Eigen::MatrixXd gp_covariance(const GpKernelParams& kernel, std::span<const int> times);

/// Lower Cholesky factor of the kernel matrix plus diagonal jitter. Jitter
/// starts at 1e-8 * kappa1 and escalates tenfold up to 1e-4 * kappa1.
struct GpFactor {
    Eigen::MatrixXd lower;
    double jitter = 0.0;
};
GpFactor factor_gp(const GpKernelParams& kernel, std::span<const int> times);

/// Contiguous integer-year grid covering every observation time in a panel.
struct TimeGrid {
    int start = 0;
    std::vector<int> times;

    std::size_t size() const { return times.size(); }
    /// Position of year t on the grid; throws InvalidInput if t is off-grid.
    std::size_t index(int t) const;
};
TimeGrid grid_for(const SeriesPanel& panel);

enum class TrajectoryKind { flat, gp_path };

struct TrajectoryAtom {
    TrajectoryKind kind = TrajectoryKind::flat;
    double level = 0.0;      // flat only
    Eigen::VectorXd path;    // gp_path only, on the grid
    double weight = 0.0;
};

/// Zero-mean path drawn from N(0, K) on the grid.
TrajectoryAtom sample_trajectory_atom(const GpKernelParams& kernel, const TimeGrid& grid, Engine& rng);
TrajectoryAtom sample_trajectory_atom(const GpFactor& factor, Engine& rng);

/// Value of the atom's trajectory at year t.
double trajectory_value(const TrajectoryAtom& atom, const TimeGrid& grid, int t);

/// Null component: log N(y | 0, Sigma_theta).
double component_loglik(const ObservedSeries& y, const ArParams& theta);
/// log N(y - f(t) | 0, Sigma_theta) for a flat or GP atom.
double component_loglik(const ObservedSeries& y, const TrajectoryAtom& atom, const ArParams& theta, const TimeGrid& grid);

/// Sufficient statistics for conditioning one GP path on assigned units:
/// precision = sum S_i^T Sigma_i^{-1} S_i, shift = sum S_i^T Sigma_i^{-1} y_i.
struct GpEvidence {
    Eigen::MatrixXd precision;
    Eigen::VectorXd shift;

    explicit GpEvidence(std::size_t grid_size)
        : precision(Eigen::MatrixXd::Zero(grid_size, grid_size)), shift(Eigen::VectorXd::Zero(grid_size)) {}
    void add(std::span<const int> times, std::span<const double> values, const ArParams& theta, const TimeGrid& grid);
};

/// Exact Gaussian conditional of a path given its evidence, computed in the
/// whitened coordinates f = L u: (I + L^T A L) u = L^T r.
struct GpConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};
GpConditional gp_conditional(const GpFactor& factor, const GpEvidence& evidence);
Eigen::VectorXd draw_gp_conditional(const GpFactor& factor, const GpEvidence& evidence, Engine& rng);

enum class Component : std::uint8_t { null = 0, flat = 1, gp = 2 };

struct FdpConfig {
    GpKernelParams kernel;
    double alpha = 1.0;  // residual DP concentration
    double nu = 1.0;     // trajectory DP precision (both the GP and flat stick sets)
    ParametricPrior base;
    int residual_truncation = 60;
    int gp_truncation = 60;
    int flat_truncation = 30;
    std::array<double, 3> component_prior{1.0, 1.0, 1.0};
    std::size_t checkpoint_stride = 0;  // 0 disables checkpoints
    std::size_t band_draws = 200;       // retained trajectory draws kept for quantile bands
    std::size_t top_atoms = 5;          // atoms summarized per checkpoint
    int residual_mh_steps = 1;
    unsigned threads = 0;
    bool constant_likelihood = false;   // test harness: prior-only sampling
};

/// kappa = (1.25, 13), alpha = 10 / ln N, nu = 15 / ln N, base (0.5, 0.25^2, 2, 1).
FdpConfig default_hyperparameters(std::size_t n_units);

void validate(const FdpConfig& config);

struct FdpState {
    double nu = 1.0;
    std::vector<double> gp_sticks;
    std::vector<TrajectoryAtom> gp_atoms;
    std::vector<double> flat_sticks;
    std::vector<TrajectoryAtom> flat_atoms;
    /// The first frozen_gp / frozen_flat atoms keep their paths and weights.
    std::size_t frozen_gp = 0;
    std::size_t frozen_flat = 0;
    std::vector<Component> gamma;
    std::vector<int> traj_assignment;  // -1 for null units
    std::array<double, 3> component_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
    DpResidualState residual;
};

/// Trajectory value of unit i's current trajectory at each of its times.
std::vector<double> unit_trajectory(const FdpState& state, const ObservedSeries& y, std::size_t unit, const TimeGrid& grid);

/// Holds the per-panel precomputation (grid, kernel factor) for repeated sweeps.
class JointSampler {
public:
    JointSampler(const SeriesPanel& panel, FdpConfig config);

    FdpState initial_state(std::uint64_t seed) const;
    void sweep(FdpState& state, SeedStream& stream, bool adapt) const;
    /// Sum over units of log N(y_i - f_i(t_i) | 0, Sigma_{theta_i}) at the current state.
    double complete_loglik(const FdpState& state) const;

    const TimeGrid& grid() const { return grid_; }
    const GpFactor& factor() const { return factor_; }
    const FdpConfig& config() const { return config_; }
    const SeriesPanel& panel() const { return panel_; }

private:
    const SeriesPanel& panel_;
    FdpConfig config_;
    TimeGrid grid_;
    GpFactor factor_;
};

/// One joint blocked-Gibbs sweep (convenience wrapper over JointSampler).
void gibbs_sweep_joint(FdpState& state, const SeriesPanel& panel, const FdpConfig& config, SeedStream& stream);

/// Invariant checks used by tests and the chain runner: simplex sums, valid indices.
void check_state(const FdpState& state, double tol = 1e-12);

/// Mixture weight of an atom within F (flat and GP sets combined).
std::vector<TrajectoryAtom> weighted_atoms(const FdpState& state);

struct SweepCheckpoint {
    std::uint64_t sweep = 0;
    std::array<double, 3> component_probs{};
    std::vector<TrajectoryAtom> top_atoms;
    std::vector<Component> gamma;
    double complete_loglik = 0.0;
};

/// Frozen-atom bookkeeping for the membership rerun: column j counts sweeps in
/// which the unit sat on frozen atom j; then "other" and "null".
struct FrozenAtoms {
    std::vector<TrajectoryAtom> atoms;  // weights are within-set mixture weights
};

struct ChainOutput {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::vector<std::string> unit_ids;
    TimeGrid grid;
    std::size_t n_burn = 0;
    std::size_t n_keep = 0;

    std::vector<SweepCheckpoint> sweeps;
    std::vector<double> inclusion;
    std::vector<double> complete_loglik;  // one per retained sweep

    /// Retained sweep with the highest complete-data log-likelihood and its F atoms.
    std::size_t best_sweep = 0;
    std::vector<TrajectoryAtom> best_atoms;
    std::array<double, 3> best_component_probs{};

    /// Thinned retained draws of each unit's trajectory on the grid (draw-major).
    std::vector<std::vector<float>> band_draws;
    std::size_t band_count = 0;

    /// Per-unit membership counts over frozen atoms + other + null (frozen reruns only).
    std::vector<std::vector<std::size_t>> membership;

    double residual_acceptance = 0.0;
};

/// Initializes from the prior, runs n_burn discarded then n_keep retained sweeps.
ChainOutput run_chain(const SeriesPanel& panel, const FdpConfig& config, std::size_t n_burn, std::size_t n_keep,
                      std::uint64_t seed, const FrozenAtoms* frozen = nullptr);

/// One JSON line per checkpoint: component_probs, top-weight atoms, per-unit gamma.
std::string checkpoint_line(const SweepCheckpoint& checkpoint);

} // namespace armt
