#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "armt/fdp_trajectory.hpp"
#include "armt/parametric_test.hpp"
#include "armt/simulation.hpp"

namespace armt {

/// Bad flags or configuration values (exit status 2).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

/// Text key = value settings. Keys may repeat (e.g. scenario components);
/// '#' starts a comment.
class RunConfig {
public:
    static RunConfig parse(std::istream& in);
    static RunConfig from_file(const std::filesystem::path& path);

    void add(const std::string& key, const std::string& value);
    /// Replaces every value of key.
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::vector<std::string> get_all(const std::string& key) const;
    /// Whitespace-separated numbers from a single value.
    std::vector<double> get_doubles(const std::string& key) const;

    /// Throws UsageError naming the first key not in `known`.
    void require_known(const std::vector<std::string_view>& known) const;

    /// Stable hash of every setting except those in `excluded` (16 hex digits).
    std::string fingerprint(const std::vector<std::string_view>& excluded = {}) const;

    const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

private:
    std::map<std::string, std::vector<std::string>> entries_;
};

/// "# seed=<seed> fingerprint=<hex>"
std::string provenance_line(std::uint64_t seed, const std::string& fingerprint);

// ---- parametric fit ----

struct ParametricFit {
    ParametricPrior prior;
    std::size_t n_draws = 0;
    double p_hat = 0.0;
    double effective_sample_size = 0.0;
    std::optional<std::string> warning;
    InclusionSummary inclusion;
};

ParametricPrior parametric_prior_from(const RunConfig& config);
ParametricFit fit_parametric(const SeriesPanel& panel, const ParametricPrior& prior, std::size_t n_draws, std::uint64_t seed,
                             unsigned threads = 0);

// ---- nonparametric fit ----

FdpConfig fdp_config_from(const RunConfig& config, std::size_t n_units);

/// Independent chains with seeds derived from `seed`; inclusion is the chain average.
struct NonparametricFit {
    std::vector<ChainOutput> chains;
    std::vector<double> inclusion;
};

NonparametricFit fit_nonparametric(const SeriesPanel& panel, const FdpConfig& config, std::size_t n_burn, std::size_t n_keep,
                                   std::size_t n_chains, std::uint64_t seed);

/// Pointwise 5/50/95% quantiles of each unit's trajectory draws (null sweeps count as 0).
struct TrajectoryBands {
    TimeGrid grid;
    std::vector<std::string> unit_ids;
    std::vector<std::vector<std::array<double, 3>>> bands;  // [unit][grid point]
};
TrajectoryBands trajectory_bands(const std::vector<ChainOutput>& chains);

/// Everything the report and cluster-mle commands need from a fit.
struct FitRecord {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::vector<std::string> unit_ids;
    std::vector<double> inclusion;
    TrajectoryBands bands;
    /// Per chain: highest complete-data log-likelihood sweep.
    struct ChainBest {
        std::uint64_t seed = 0;
        std::size_t sweep = 0;
        double complete_loglik = 0.0;
        std::array<double, 3> component_probs{};
        std::vector<TrajectoryAtom> atoms;
        double residual_acceptance = 0.0;
    };
    std::vector<ChainBest> chains;
};

FitRecord make_fit_record(const NonparametricFit& fit, std::uint64_t seed, const std::string& fingerprint);
std::string fit_record_json(const FitRecord& record);
FitRecord parse_fit_record(const std::string& json_text);

// ---- reporting ----

std::string discovery_line(std::span<const double> inclusion, double threshold);
/// unit_id,p_i,flag50,flag90 (plus mc_stderr when given).
std::string inclusion_table(const std::vector<std::string>& unit_ids, std::span<const double> p,
                            const std::vector<double>* mc_stderr, const std::string& header_line);
std::string bands_table(const TrajectoryBands& bands, const std::string& header_line);

struct ReportFiles {
    std::string inclusion;
    std::string bands;
    std::string discoveries;
};
ReportFiles report_summaries(const FitRecord& record, std::span<const double> thresholds);

// ---- MLE of F and the frozen rerun ----

struct MleTrajectorySet {
    /// Sorted by F-level weight, nonincreasing.
    std::vector<TrajectoryAtom> atoms;
    std::array<double, 3> component_probs{};
    std::size_t source_sweep = 0;
    std::size_t K = 0;
    std::optional<std::string> warning;

    /// Converts F-level weights to within-set (flat or GP) weights for the sampler.
    FrozenAtoms frozen() const;
};

MleTrajectorySet mle_trajectory_set(const ChainOutput& chain, std::size_t K);
MleTrajectorySet mle_trajectory_set(const FitRecord::ChainBest& best, std::size_t K);

struct MembershipTable {
    std::vector<std::string> unit_ids;
    std::size_t n_frozen = 0;
    /// Rows of percentages over frozen atoms, then "other", then "null".
    std::vector<std::vector<double>> percent;
};

MembershipTable frozen_cluster_rerun(const SeriesPanel& panel, const MleTrajectorySet& frozen, const FdpConfig& config,
                                     std::size_t n_burn, std::size_t n_keep, std::uint64_t seed);
std::string membership_csv(const MembershipTable& table, const std::string& header_line);
/// Whole percentages, as a human-readable table.
std::string membership_text(const MembershipTable& table);

// ---- simulation scenarios ----

SimulatedPanel simulate_scenario(const RunConfig& scenario, std::uint64_t seed);
std::string truth_table(const SeriesPanel& panel, const TruthLabels& truth, const std::string& header_line);

/// Runs one subcommand; returns 0 ok, 2 usage, 3 data, 4 numerical.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace armt
