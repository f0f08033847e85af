#include "armt/fdp_trajectory.hpp"

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
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::uint64_t kStageJointAssign = 2;

double safe_log(double w) {
    return w > 0.0 ? std::log(w) : kNegInf;
}

void refresh_weights(std::vector<TrajectoryAtom>& atoms, std::span<const double> sticks) {
    const auto w = stick_weights(sticks);
    for (std::size_t l = 0; l < atoms.size(); ++l) atoms[l].weight = w[l];
}

// log N(y - m 1 | 0, Sigma) from the sufficient statistics of y.
double flat_loglik(const Ar1Stats& st, double m) {
    const double quad = st.quad - 2.0 * m * st.cross + m * m * st.ones;
    return -0.5 * (static_cast<double>(st.n) * kLog2Pi + st.logdet + quad);
}

} // namespace

void validate(const GpKernelParams& kernel) {
    if (!(kernel.kappa1 > 0.0) || !(kernel.kappa2 > 0.0)) throw DomainError("GP kernel parameters must be positive");
}

Eigen::MatrixXd gp_covariance(const GpKernelParams& kernel, std::span<const int> times) {
    validate(kernel);
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (times[k] <= times[k - 1]) throw InvalidInput("GP times must be strictly increasing");
    }
    const auto n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = kernel.kappa1;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double u = static_cast<double>(times[i] - times[j]) / kernel.kappa2;
            K(i, j) = K(j, i) = kernel.kappa1 * std::exp(-0.5 * u * u);
        }
    }
    return K;
}

GpFactor factor_gp(const GpKernelParams& kernel, std::span<const int> times) {
    const Eigen::MatrixXd K = gp_covariance(kernel, times);
    for (double jitter = 1e-8 * kernel.kappa1; jitter <= 1e-4 * kernel.kappa1 * 1.0000001; jitter *= 10.0) {
        Eigen::MatrixXd Kj = K;
        Kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(Kj);
        if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
    }
    throw NumericalError("GP covariance factorization failed even with jitter 1e-4 * kappa1");
}

std::size_t TimeGrid::index(int t) const {
    const long pos = static_cast<long>(t) - start;
    if (pos < 0 || pos >= static_cast<long>(times.size())) {
        throw InvalidInput(fmt::format("time {} lies outside the trajectory grid [{}, {}]", t, start,
                                       start + static_cast<long>(times.size()) - 1));
    }
    return static_cast<std::size_t>(pos);
}

TimeGrid grid_for(const SeriesPanel& panel) {
    if (panel.empty()) throw InvalidInput("cannot build a time grid for an empty panel");
    int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
    for (const auto& s : panel.series) {
        if (s.times.empty()) continue;
        lo = std::min(lo, s.times.front());
        hi = std::max(hi, s.times.back());
    }
    TimeGrid grid;
    grid.start = lo;
    for (int t = lo; t <= hi; ++t) grid.times.push_back(t);
    return grid;
}

TrajectoryAtom sample_trajectory_atom(const GpFactor& factor, Engine& rng) {
    Eigen::VectorXd z(factor.lower.rows());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = draw_normal(rng);
    TrajectoryAtom atom;
    atom.kind = TrajectoryKind::gp_path;
    atom.path = factor.lower * z;
    return atom;
}

TrajectoryAtom sample_trajectory_atom(const GpKernelParams& kernel, const TimeGrid& grid, Engine& rng) {
    return sample_trajectory_atom(factor_gp(kernel, grid.times), rng);
}

double trajectory_value(const TrajectoryAtom& atom, const TimeGrid& grid, int t) {
    if (atom.kind == TrajectoryKind::flat) return atom.level;
    const std::size_t k = grid.index(t);
    if (static_cast<Eigen::Index>(k) >= atom.path.size()) throw InvalidInput("trajectory path is shorter than the grid");
    return atom.path[static_cast<Eigen::Index>(k)];
}

double component_loglik(const ObservedSeries& y, const ArParams& theta) {
    return ar1_loglik(y, theta);
}

double component_loglik(const ObservedSeries& y, const TrajectoryAtom& atom, const ArParams& theta, const TimeGrid& grid) {
    validate(theta);
    validate(y);
    std::vector<double> f(y.times.size());
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = trajectory_value(atom, grid, y.times[k]);
    return ar1_loglik_offset(y.times, y.values, f, theta);
}

void GpEvidence::add(std::span<const int> times, std::span<const double> values, const ArParams& theta,
                     const TimeGrid& grid) {
    const TridiagonalPrecision prec = ar1_precision(times, theta);
    const std::size_t n = times.size();
    std::vector<Eigen::Index> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = static_cast<Eigen::Index>(grid.index(times[k]));
    for (std::size_t k = 0; k < n; ++k) {
        precision(idx[k], idx[k]) += prec.diag[k];
        double sy = prec.diag[k] * values[k];
        if (k > 0) sy += prec.off[k - 1] * values[k - 1];
        if (k + 1 < n) {
            sy += prec.off[k] * values[k + 1];
            precision(idx[k], idx[k + 1]) += prec.off[k];
            precision(idx[k + 1], idx[k]) += prec.off[k];
        }
        shift(idx[k]) += sy;
    }
}

namespace {

struct WhitenedSystem {
    Eigen::LLT<Eigen::MatrixXd> llt;  // of I + L^T A L
    Eigen::VectorXd rhs;              // L^T r
};

WhitenedSystem whitened_system(const GpFactor& factor, const GpEvidence& evidence) {
    const auto& L = factor.lower;
    Eigen::MatrixXd P = L.transpose() * evidence.precision * L;
    P.diagonal().array() += 1.0;
    WhitenedSystem sys{Eigen::LLT<Eigen::MatrixXd>(P), L.transpose() * evidence.shift};
    if (sys.llt.info() != Eigen::Success) throw NumericalError("GP conditional precision is not positive-definite");
    return sys;
}

} // namespace

GpConditional gp_conditional(const GpFactor& factor, const GpEvidence& evidence) {
    const auto sys = whitened_system(factor, evidence);
    const auto& L = factor.lower;
    GpConditional out;
    out.mean = L * sys.llt.solve(sys.rhs);
    const Eigen::MatrixXd Pinv_Lt = sys.llt.solve(Eigen::MatrixXd(L.transpose()));
    out.covariance = L * Pinv_Lt;
    return out;
}

Eigen::VectorXd draw_gp_conditional(const GpFactor& factor, const GpEvidence& evidence, Engine& rng) {
    const auto sys = whitened_system(factor, evidence);
    Eigen::VectorXd z(sys.rhs.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = draw_normal(rng);
    // u = P^{-1} rhs + M^{-T} z with P = M M^T has covariance P^{-1}.
    Eigen::VectorXd u = sys.llt.solve(sys.rhs);
    u += sys.llt.matrixU().solve(z);
    return factor.lower * u;
}

FdpConfig default_hyperparameters(std::size_t n_units) {
    if (n_units < 2) throw InvalidInput("default hyperparameters need at least two units");
    FdpConfig c;
    const double log_n = std::log(static_cast<double>(n_units));
    c.kernel = {1.25, 13.0};
    c.alpha = 10.0 / log_n;
    c.nu = 15.0 / log_n;
    c.base = ParametricPrior{0.5, 0.25 * 0.25, 2.0, 1.0, 1.0};
    return c;
}

void validate(const FdpConfig& c) {
    validate(c.kernel);
    validate(c.base);
    if (!(c.alpha > 0.0) || !(c.nu > 0.0)) throw DomainError("DP concentrations must be positive");
    if (c.residual_truncation < 2 || c.gp_truncation < 2 || c.flat_truncation < 2) {
        throw InvalidInput("stick truncation levels must be at least 2");
    }
    for (double a : c.component_prior) {
        if (!(a > 0.0)) throw DomainError("component Dirichlet prior must be positive");
    }
}

std::vector<double> unit_trajectory(const FdpState& state, const ObservedSeries& y, std::size_t unit, const TimeGrid& grid) {
    std::vector<double> f(y.times.size(), 0.0);
    const Component g = state.gamma[unit];
    if (g == Component::null) return f;
    const auto& atom = g == Component::flat ? state.flat_atoms[state.traj_assignment[unit]] : state.gp_atoms[state.traj_assignment[unit]];
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = trajectory_value(atom, grid, y.times[k]);
    return f;
}

JointSampler::JointSampler(const SeriesPanel& panel, FdpConfig config)
    : panel_(panel), config_(std::move(config)), grid_(grid_for(panel)), factor_(factor_gp(config_.kernel, grid_.times)) {
    validate(config_);
    validate(panel_);
}

FdpState JointSampler::initial_state(std::uint64_t seed) const {
    Engine rng = make_engine(derive_seed(seed, {0xF0}));
    FdpState st;
    st.nu = config_.nu;
    const auto probs = draw_dirichlet(rng, config_.component_prior);
    std::copy(probs.begin(), probs.end(), st.component_probs.begin());

    st.gp_sticks.resize(config_.gp_truncation - 1);
    for (auto& s : st.gp_sticks) s = draw_beta(rng, 1.0, config_.nu);
    st.gp_atoms.resize(config_.gp_truncation);
    for (auto& a : st.gp_atoms) a = sample_trajectory_atom(factor_, rng);
    refresh_weights(st.gp_atoms, st.gp_sticks);

    st.flat_sticks.resize(config_.flat_truncation - 1);
    for (auto& s : st.flat_sticks) s = draw_beta(rng, 1.0, config_.nu);
    st.flat_atoms.resize(config_.flat_truncation);
    for (auto& a : st.flat_atoms) {
        a.kind = TrajectoryKind::flat;
        a.level = std::sqrt(config_.kernel.kappa1) * draw_normal(rng);
    }
    refresh_weights(st.flat_atoms, st.flat_sticks);

    const std::size_t N = panel_.size();
    st.gamma.resize(N);
    st.traj_assignment.resize(N);
    std::vector<double> lw_comp{safe_log(st.component_probs[0]), safe_log(st.component_probs[1]), safe_log(st.component_probs[2])};
    std::vector<double> lw_flat, lw_gp;
    for (const auto& a : st.flat_atoms) lw_flat.push_back(safe_log(a.weight));
    for (const auto& a : st.gp_atoms) lw_gp.push_back(safe_log(a.weight));
    for (std::size_t i = 0; i < N; ++i) {
        const auto c = static_cast<Component>(sample_log_categorical(lw_comp, draw_uniform(rng)));
        st.gamma[i] = c;
        if (c == Component::null) {
            st.traj_assignment[i] = -1;
        } else {
            const auto& lw = c == Component::flat ? lw_flat : lw_gp;
            st.traj_assignment[i] = static_cast<int>(sample_log_categorical(lw, draw_uniform(rng)));
        }
    }
    st.residual = init_residual_state(N, config_.alpha, config_.base, config_.residual_truncation, derive_seed(seed, {0xF1}));
    return st;
}

void JointSampler::sweep(FdpState& st, SeedStream& stream, bool adapt) const {
    const std::size_t N = panel_.size();
    const std::size_t n_gp = st.gp_atoms.size();
    const std::size_t n_flat = st.flat_atoms.size();
    const auto& res_atoms = st.residual.stick.atoms;
    const bool flat_lik = config_.constant_likelihood;

    // (a) joint (gamma_i, atom) draw per unit against a snapshot of the state.
    {
        const double lc0 = safe_log(st.component_probs[0]);
        const double lc1 = safe_log(st.component_probs[1]);
        const double lc2 = safe_log(st.component_probs[2]);
        std::vector<double> lw_flat(n_flat), lw_gp(n_gp);
        for (std::size_t l = 0; l < n_flat; ++l) lw_flat[l] = lc1 + safe_log(st.flat_atoms[l].weight);
        for (std::size_t l = 0; l < n_gp; ++l) lw_gp[l] = lc2 + safe_log(st.gp_atoms[l].weight);

        parallel_for(
            N,
            [&](std::size_t i) {
                const auto& y = panel_.series[i];
                const ArParams& theta = res_atoms[st.residual.assignments[i]];
                const std::size_t T = y.times.size();
                std::vector<double> lp(1 + n_flat + n_gp, kNegInf);
                std::vector<double> f(T);
                std::vector<std::size_t> idx(T);
                for (std::size_t k = 0; k < T; ++k) idx[k] = grid_.index(y.times[k]);

                const Ar1Stats stats = ar1_stats(y.times, y.values, theta);
                lp[0] = lc0 + (flat_lik ? 0.0 : flat_loglik(stats, 0.0));
                for (std::size_t l = 0; l < n_flat; ++l) {
                    if (lw_flat[l] == kNegInf) continue;
                    lp[1 + l] = lw_flat[l] + (flat_lik ? 0.0 : flat_loglik(stats, st.flat_atoms[l].level));
                }
                for (std::size_t l = 0; l < n_gp; ++l) {
                    if (lw_gp[l] == kNegInf) continue;
                    double ll = 0.0;
                    if (!flat_lik) {
                        const auto& path = st.gp_atoms[l].path;
                        for (std::size_t k = 0; k < T; ++k) f[k] = path[static_cast<Eigen::Index>(idx[k])];
                        ll = ar1_loglik_offset(y.times, y.values, f, theta);
                    }
                    lp[1 + n_flat + l] = lw_gp[l] + ll;
                }
                for (double v : lp) {
                    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
                        throw NumericalError(fmt::format("joint sweep stage (a): non-finite log-probability for unit '{}'", y.unit_id));
                    }
                }
                const std::size_t pick = sample_log_categorical(lp, stream.unit_uniform(kStageJointAssign, i));
                if (pick == 0) {
                    st.gamma[i] = Component::null;
                    st.traj_assignment[i] = -1;
                } else if (pick <= n_flat) {
                    st.gamma[i] = Component::flat;
                    st.traj_assignment[i] = static_cast<int>(pick - 1);
                } else {
                    st.gamma[i] = Component::gp;
                    st.traj_assignment[i] = static_cast<int>(pick - 1 - n_flat);
                }
            },
            config_.threads);
    }

    Engine& rng = stream.engine();

    // (b) component probabilities.
    std::array<double, 3> counts{0.0, 0.0, 0.0};
    for (auto g : st.gamma) counts[static_cast<int>(g)] += 1.0;
    {
        std::array<double, 3> a{};
        for (int k = 0; k < 3; ++k) a[k] = config_.component_prior[k] + counts[k];
        const auto probs = draw_dirichlet(rng, a);
        std::copy(probs.begin(), probs.end(), st.component_probs.begin());
    }

    std::vector<std::vector<std::size_t>> flat_members(n_flat), gp_members(n_gp);
    for (std::size_t i = 0; i < N; ++i) {
        if (st.gamma[i] == Component::flat) flat_members[st.traj_assignment[i]].push_back(i);
        if (st.gamma[i] == Component::gp) gp_members[st.traj_assignment[i]].push_back(i);
    }

    // (c) flat levels: conjugate normal update against N(0, kappa1).
    const double kappa1 = config_.kernel.kappa1;
    for (std::size_t l = st.frozen_flat; l < n_flat; ++l) {
        double precision = 1.0 / kappa1;
        double shift = 0.0;
        if (!flat_lik) {
            for (auto i : flat_members[l]) {
                const auto& y = panel_.series[i];
                const Ar1Stats s = ar1_stats(y.times, y.values, res_atoms[st.residual.assignments[i]]);
                precision += s.ones;
                shift += s.cross;
            }
        }
        st.flat_atoms[l].level = shift / precision + draw_normal(rng) / std::sqrt(precision);
    }

    // (d) GP paths: exact Gaussian conditional given assigned units; empty atoms from the prior.
    for (std::size_t l = st.frozen_gp; l < n_gp; ++l) {
        if (gp_members[l].empty() || flat_lik) {
            st.gp_atoms[l].path = sample_trajectory_atom(factor_, rng).path;
            continue;
        }
        GpEvidence ev(grid_.size());
        for (auto i : gp_members[l]) {
            const auto& y = panel_.series[i];
            ev.add(y.times, y.values, res_atoms[st.residual.assignments[i]], grid_);
        }
        st.gp_atoms[l].path = draw_gp_conditional(factor_, ev, rng);
    }

    // (e) trajectory sticks; frozen leading sticks stay fixed.
    {
        std::vector<std::size_t> nf(n_flat, 0), ng(n_gp, 0);
        for (std::size_t l = 0; l < n_flat; ++l) nf[l] = flat_members[l].size();
        for (std::size_t l = 0; l < n_gp; ++l) ng[l] = gp_members[l].size();
        update_sticks(st.flat_sticks, nf, st.nu, rng, st.frozen_flat);
        update_sticks(st.gp_sticks, ng, st.nu, rng, st.frozen_gp);
        refresh_weights(st.flat_atoms, st.flat_sticks);
        refresh_weights(st.gp_atoms, st.gp_sticks);
    }

    // (f) residual model on y_i - f_i(t_i).
    std::vector<std::vector<double>> resid(N);
    std::vector<SeriesRef> refs(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto& y = panel_.series[i];
        resid[i] = y.values;
        const auto f = unit_trajectory(st, y, i, grid_);
        for (std::size_t k = 0; k < f.size(); ++k) resid[i][k] -= f[k];
        refs[i] = {y.times, resid[i]};
    }
    ResidualSamplerOptions ropt;
    ropt.adapt = adapt;
    ropt.mh_steps = config_.residual_mh_steps;
    ropt.threads = config_.threads;
    ropt.constant_likelihood = flat_lik;
    gibbs_sweep_residual(st.residual, refs, stream, ropt);
}

double JointSampler::complete_loglik(const FdpState& st) const {
    double total = 0.0;
    for (std::size_t i = 0; i < panel_.size(); ++i) {
        const auto& y = panel_.series[i];
        const auto f = unit_trajectory(st, y, i, grid_);
        total += ar1_loglik_offset(y.times, y.values, f, st.residual.stick.atoms[st.residual.assignments[i]]);
    }
    return total;
}

void gibbs_sweep_joint(FdpState& state, const SeriesPanel& panel, const FdpConfig& config, SeedStream& stream) {
    JointSampler sampler(panel, config);
    sampler.sweep(state, stream, false);
}

void check_state(const FdpState& st, double tol) {
    auto simplex = [&](double sum, const char* what) {
        if (std::abs(sum - 1.0) > tol) throw NumericalError(fmt::format("{} sums to {} (off by {:.3e})", what, sum, sum - 1.0));
    };
    simplex(st.component_probs[0] + st.component_probs[1] + st.component_probs[2], "component_probs");
    double s = 0.0;
    for (const auto& a : st.gp_atoms) s += a.weight;
    simplex(s, "gp stick weights");
    s = 0.0;
    for (const auto& a : st.flat_atoms) s += a.weight;
    simplex(s, "flat stick weights");
    simplex(std::accumulate(st.residual.stick.weights.begin(), st.residual.stick.weights.end(), 0.0), "residual stick weights");
    for (std::size_t i = 0; i < st.gamma.size(); ++i) {
        const int a = st.traj_assignment[i];
        switch (st.gamma[i]) {
        case Component::null:
            if (a != -1) throw NumericalError(fmt::format("null unit {} carries a trajectory assignment", i));
            break;
        case Component::flat:
            if (a < 0 || a >= static_cast<int>(st.flat_atoms.size())) throw NumericalError(fmt::format("unit {} has an invalid flat atom", i));
            break;
        case Component::gp:
            if (a < 0 || a >= static_cast<int>(st.gp_atoms.size())) throw NumericalError(fmt::format("unit {} has an invalid GP atom", i));
            break;
        }
    }
}

std::vector<TrajectoryAtom> weighted_atoms(const FdpState& st) {
    const double alt = st.component_probs[1] + st.component_probs[2];
    const double wf = alt > 0 ? st.component_probs[1] / alt : 0.0;
    const double wg = alt > 0 ? st.component_probs[2] / alt : 0.0;
    std::vector<TrajectoryAtom> out;
    out.reserve(st.flat_atoms.size() + st.gp_atoms.size());
    for (const auto& a : st.flat_atoms) {
        out.push_back(a);
        out.back().weight = wf * a.weight;
    }
    for (const auto& a : st.gp_atoms) {
        out.push_back(a);
        out.back().weight = wg * a.weight;
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.weight > y.weight; });
    return out;
}

namespace {

void install_frozen(FdpState& st, const FrozenAtoms& frozen, const TimeGrid& grid, std::vector<int>& column_of_flat,
                    std::vector<int>& column_of_gp) {
    std::vector<double> flat_w, gp_w;
    column_of_flat.assign(st.flat_atoms.size(), -1);
    column_of_gp.assign(st.gp_atoms.size(), -1);
    for (std::size_t j = 0; j < frozen.atoms.size(); ++j) {
        const auto& a = frozen.atoms[j];
        if (a.kind == TrajectoryKind::flat) {
            const std::size_t slot = flat_w.size();
            if (slot + 1 >= st.flat_atoms.size()) throw InvalidInput("too many frozen flat atoms for the flat truncation level");
            st.flat_atoms[slot].level = a.level;
            column_of_flat[slot] = static_cast<int>(j);
            flat_w.push_back(a.weight);
        } else {
            const std::size_t slot = gp_w.size();
            if (slot + 1 >= st.gp_atoms.size()) throw InvalidInput("too many frozen GP atoms for the GP truncation level");
            if (a.path.size() != static_cast<Eigen::Index>(grid.size())) throw InvalidInput("frozen GP atom is not defined on the panel grid");
            st.gp_atoms[slot].path = a.path;
            column_of_gp[slot] = static_cast<int>(j);
            gp_w.push_back(a.weight);
        }
    }
    const auto fs = sticks_from_weights(flat_w);
    std::copy(fs.begin(), fs.end(), st.flat_sticks.begin());
    const auto gs = sticks_from_weights(gp_w);
    std::copy(gs.begin(), gs.end(), st.gp_sticks.begin());
    st.frozen_flat = flat_w.size();
    st.frozen_gp = gp_w.size();
    refresh_weights(st.flat_atoms, st.flat_sticks);
    refresh_weights(st.gp_atoms, st.gp_sticks);
}

} // namespace

ChainOutput run_chain(const SeriesPanel& panel, const FdpConfig& config, std::size_t n_burn, std::size_t n_keep,
                      std::uint64_t seed, const FrozenAtoms* frozen) {
    if (n_burn < 1 || n_keep < 1) throw InvalidInput("run_chain needs n_burn >= 1 and n_keep >= 1");
    const JointSampler sampler(panel, config);
    FdpState st = sampler.initial_state(seed);
    std::vector<int> column_of_flat, column_of_gp;
    if (frozen) install_frozen(st, *frozen, sampler.grid(), column_of_flat, column_of_gp);

    const std::size_t N = panel.size();
    const std::size_t G = sampler.grid().size();
    ChainOutput out;
    out.seed = seed;
    out.grid = sampler.grid();
    out.n_burn = n_burn;
    out.n_keep = n_keep;
    for (const auto& s : panel.series) out.unit_ids.push_back(s.unit_id);
    out.inclusion.assign(N, 0.0);
    out.band_count = std::min(n_keep, config.band_draws);
    const std::size_t band_stride = out.band_count > 0 ? n_keep / out.band_count : 0;
    out.band_draws.assign(N, std::vector<float>(out.band_count * G, 0.0f));
    const std::size_t n_frozen = frozen ? frozen->atoms.size() : 0;
    if (frozen) out.membership.assign(N, std::vector<std::size_t>(n_frozen + 2, 0));

    SeedStream stream(derive_seed(seed, {0x5EED}));
    std::vector<std::size_t> nonnull(N, 0);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t band_slot = 0;

    for (std::size_t it = 0; it < n_burn + n_keep; ++it) {
        stream.next_sweep();
        sampler.sweep(st, stream, it < n_burn);
        check_state(st, 1e-12);
        if (it < n_burn) continue;
        const std::size_t r = it - n_burn;

        for (std::size_t i = 0; i < N; ++i) nonnull[i] += st.gamma[i] != Component::null;
        const double cll = sampler.complete_loglik(st);
        out.complete_loglik.push_back(cll);
        if (cll > best) {
            best = cll;
            out.best_sweep = r;
            out.best_atoms = weighted_atoms(st);
            out.best_component_probs = st.component_probs;
        }
        if (frozen) {
            for (std::size_t i = 0; i < N; ++i) {
                int col = static_cast<int>(n_frozen) + 1;  // null
                if (st.gamma[i] == Component::flat) {
                    const int c = column_of_flat[st.traj_assignment[i]];
                    col = c >= 0 ? c : static_cast<int>(n_frozen);
                } else if (st.gamma[i] == Component::gp) {
                    const int c = column_of_gp[st.traj_assignment[i]];
                    col = c >= 0 ? c : static_cast<int>(n_frozen);
                }
                ++out.membership[i][col];
            }
        }
        if (band_stride > 0 && band_slot < out.band_count && r % band_stride == 0) {
            for (std::size_t i = 0; i < N; ++i) {
                float* row = out.band_draws[i].data() + band_slot * G;
                if (st.gamma[i] == Component::flat) {
                    std::fill(row, row + G, static_cast<float>(st.flat_atoms[st.traj_assignment[i]].level));
                } else if (st.gamma[i] == Component::gp) {
                    const auto& path = st.gp_atoms[st.traj_assignment[i]].path;
                    for (std::size_t g = 0; g < G; ++g) row[g] = static_cast<float>(path[static_cast<Eigen::Index>(g)]);
                }
            }
            ++band_slot;
        }
        if (config.checkpoint_stride > 0 && r % config.checkpoint_stride == 0) {
            SweepCheckpoint cp;
            cp.sweep = it + 1;
            cp.component_probs = st.component_probs;
            auto atoms = weighted_atoms(st);
            atoms.resize(std::min(atoms.size(), config.top_atoms));
            cp.top_atoms = std::move(atoms);
            cp.gamma = st.gamma;
            cp.complete_loglik = cll;
            out.sweeps.push_back(std::move(cp));
        }
    }
    out.band_count = band_slot;
    for (auto& b : out.band_draws) b.resize(band_slot * G);
    for (std::size_t i = 0; i < N; ++i) out.inclusion[i] = static_cast<double>(nonnull[i]) / static_cast<double>(n_keep);
    out.residual_acceptance = st.residual.mh_proposed > 0
                                  ? static_cast<double>(st.residual.mh_accepted) / static_cast<double>(st.residual.mh_proposed)
                                  : 0.0;
    return out;
}

std::string checkpoint_line(const SweepCheckpoint& cp) {
    nlohmann::json rec;
    rec["sweep"] = cp.sweep;
    rec["component_probs"] = cp.component_probs;
    rec["complete_loglik"] = cp.complete_loglik;
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : cp.top_atoms) {
        nlohmann::json j;
        j["kind"] = a.kind == TrajectoryKind::flat ? "flat" : "gp";
        j["weight"] = a.weight;
        if (a.kind == TrajectoryKind::flat) {
            j["level"] = a.level;
        } else {
            j["path"] = std::vector<double>(a.path.data(), a.path.data() + a.path.size());
        }
        atoms.push_back(std::move(j));
    }
    rec["top_atoms"] = atoms;
    std::vector<int> gamma(cp.gamma.size());
    for (std::size_t i = 0; i < gamma.size(); ++i) gamma[i] = static_cast<int>(cp.gamma[i]);
    rec["gamma"] = gamma;
    return rec.dump();
}

} // namespace armt
