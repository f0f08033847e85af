#include "armt/driver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "armt/error.hpp"
#include "armt/panel_io.hpp"
#include "armt/parallel.hpp"

namespace armt {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || trim(text.substr(used)).size() != 0) throw UsageError(fmt::format("setting '{}' is not a number: '{}'", key, text));
    return x;
}

} // namespace

RunConfig RunConfig::parse(std::istream& in) {
    RunConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw UsageError(fmt::format("config line {}: expected key = value", lineno));
        const auto key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw UsageError(fmt::format("config line {}: empty key", lineno));
        c.add(key, trim(std::string_view(body).substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(fmt::format("cannot open config file '{}'", path.string()));
    return parse(in);
}

void RunConfig::add(const std::string& key, const std::string& value) { entries_[key].push_back(value); }
void RunConfig::set(const std::string& key, const std::string& value) { entries_[key] = {value}; }
bool RunConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second.size() > 1) throw UsageError(fmt::format("setting '{}' given more than once", key));
    return it->second.front();
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? parse_double(key, get(key, "")) : fallback;
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto text = get(key, "");
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw UsageError(fmt::format("setting '{}' is not an integer: '{}'", key, text));
    return x;
}

std::vector<std::string> RunConfig::get_all(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<std::string>{} : it->second;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get(key, ""));
    std::string tok;
    while (in >> tok) out.push_back(parse_double(key, tok));
    return out;
}

void RunConfig::require_known(const std::vector<std::string_view>& known) const {
    for (const auto& [k, v] : entries_) {
        if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError(fmt::format("unknown setting '{}'", k));
    }
}

std::string RunConfig::fingerprint(const std::vector<std::string_view>& excluded) const {
    std::uint64_t h = fnv1a64("");
    for (const auto& [k, values] : entries_) {
        if (std::find(excluded.begin(), excluded.end(), k) != excluded.end()) continue;
        for (const auto& v : values) h = fnv1a64(k + "=" + v + "\n", h);
    }
    return fmt::format("{:016x}", h);
}

std::string provenance_line(std::uint64_t seed, const std::string& fingerprint) {
    return fmt::format("# seed={} fingerprint={}", seed, fingerprint);
}

// ---- parametric ----

ParametricPrior parametric_prior_from(const RunConfig& c) {
    ParametricPrior p;
    p.d = c.get_double("d", p.d);
    p.D = c.get_double("D", p.D);
    p.a = c.get_double("a", p.a);
    p.b = c.get_double("b", p.b);
    p.sigma2 = c.get_double("sigma2", p.sigma2);
    try {
        validate(p);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return p;
}

ParametricFit fit_parametric(const SeriesPanel& panel, const ParametricPrior& prior, std::size_t n_draws, std::uint64_t seed,
                             unsigned threads) {
    const auto draws = build_importance_sampler(prior, panel, n_draws, seed);
    ParametricFit fit;
    fit.prior = prior;
    fit.n_draws = n_draws;
    fit.p_hat = posterior_p_mode(draws);
    fit.effective_sample_size = draws.effective_sample_size;
    fit.warning = draws.warning;
    fit.inclusion = inclusion_probabilities_parametric(draws, panel, prior, threads);
    return fit;
}

// ---- nonparametric ----

FdpConfig fdp_config_from(const RunConfig& c, std::size_t n_units) {
    FdpConfig f = default_hyperparameters(std::max<std::size_t>(n_units, 2));
    f.kernel.kappa1 = c.get_double("kappa1", f.kernel.kappa1);
    f.kernel.kappa2 = c.get_double("kappa2", f.kernel.kappa2);
    f.alpha = c.get_double("alpha", f.alpha);
    f.nu = c.get_double("nu", f.nu);
    f.base.d = c.get_double("d", f.base.d);
    f.base.D = c.get_double("D", f.base.D);
    f.base.a = c.get_double("a", f.base.a);
    f.base.b = c.get_double("b", f.base.b);
    f.residual_truncation = static_cast<int>(c.get_int("residual_truncation", f.residual_truncation));
    f.gp_truncation = static_cast<int>(c.get_int("gp_truncation", f.gp_truncation));
    f.flat_truncation = static_cast<int>(c.get_int("flat_truncation", f.flat_truncation));
    f.checkpoint_stride = static_cast<std::size_t>(std::max(0LL, c.get_int("checkpoint_stride", 1)));
    f.band_draws = static_cast<std::size_t>(std::max(0LL, c.get_int("band_draws", 200)));
    f.top_atoms = static_cast<std::size_t>(std::max(0LL, c.get_int("top_atoms", 5)));
    f.residual_mh_steps = static_cast<int>(c.get_int("mh_steps", 1));
    f.threads = static_cast<unsigned>(std::max(0LL, c.get_int("threads", 0)));
    try {
        validate(f);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return f;
}

NonparametricFit fit_nonparametric(const SeriesPanel& panel, const FdpConfig& config, std::size_t n_burn, std::size_t n_keep,
                                   std::size_t n_chains, std::uint64_t seed) {
    if (n_chains < 1) throw InvalidInput("need at least one chain");
    NonparametricFit fit;
    fit.chains.resize(n_chains);
    // Chains share the thread budget with their inner unit loops.
    parallel_for(n_chains, [&](std::size_t c) {
        fit.chains[c] = run_chain(panel, config, n_burn, n_keep, derive_seed(seed, {0xC4A1, c}));
    }, config.threads);
    fit.inclusion.assign(panel.size(), 0.0);
    for (const auto& ch : fit.chains)
        for (std::size_t i = 0; i < panel.size(); ++i) fit.inclusion[i] += ch.inclusion[i] / static_cast<double>(n_chains);
    return fit;
}

namespace {

// Linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& xs, double q) {
    if (xs.empty()) return 0.0;
    const double h = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

} // namespace

TrajectoryBands trajectory_bands(const std::vector<ChainOutput>& chains) {
    if (chains.empty()) throw InvalidInput("no chains to summarize");
    TrajectoryBands out;
    out.grid = chains.front().grid;
    out.unit_ids = chains.front().unit_ids;
    const std::size_t G = out.grid.size();
    out.bands.resize(out.unit_ids.size());
    std::vector<double> xs;
    for (std::size_t i = 0; i < out.unit_ids.size(); ++i) {
        out.bands[i].resize(G);
        for (std::size_t g = 0; g < G; ++g) {
            xs.clear();
            for (const auto& ch : chains)
                for (std::size_t d = 0; d < ch.band_count; ++d) xs.push_back(ch.band_draws[i][d * G + g]);
            std::sort(xs.begin(), xs.end());
            out.bands[i][g] = {quantile_sorted(xs, 0.05), quantile_sorted(xs, 0.5), quantile_sorted(xs, 0.95)};
        }
    }
    return out;
}

// ---- fit record ----

namespace {

nlohmann::json atom_json(const TrajectoryAtom& a) {
    nlohmann::json j;
    j["kind"] = a.kind == TrajectoryKind::flat ? "flat" : "gp";
    j["weight"] = a.weight;
    if (a.kind == TrajectoryKind::flat) j["level"] = a.level;
    else j["path"] = std::vector<double>(a.path.data(), a.path.data() + a.path.size());
    return j;
}

TrajectoryAtom atom_from_json(const nlohmann::json& j) {
    TrajectoryAtom a;
    a.kind = j.at("kind").get<std::string>() == "flat" ? TrajectoryKind::flat : TrajectoryKind::gp_path;
    a.weight = j.at("weight").get<double>();
    if (a.kind == TrajectoryKind::flat) {
        a.level = j.at("level").get<double>();
    } else {
        const auto p = j.at("path").get<std::vector<double>>();
        a.path = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    }
    return a;
}

} // namespace

FitRecord make_fit_record(const NonparametricFit& fit, std::uint64_t seed, const std::string& fingerprint) {
    FitRecord r;
    r.seed = seed;
    r.fingerprint = fingerprint;
    r.unit_ids = fit.chains.front().unit_ids;
    r.inclusion = fit.inclusion;
    r.bands = trajectory_bands(fit.chains);
    for (const auto& ch : fit.chains) {
        FitRecord::ChainBest b;
        b.seed = ch.seed;
        b.sweep = ch.best_sweep;
        b.complete_loglik = ch.complete_loglik.at(ch.best_sweep);
        b.component_probs = ch.best_component_probs;
        b.atoms = ch.best_atoms;
        b.residual_acceptance = ch.residual_acceptance;
        r.chains.push_back(std::move(b));
    }
    return r;
}

std::string fit_record_json(const FitRecord& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["fingerprint"] = r.fingerprint;
    j["unit_ids"] = r.unit_ids;
    j["inclusion"] = r.inclusion;
    j["grid_start"] = r.bands.grid.start;
    j["grid_size"] = r.bands.grid.size();
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& unit : r.bands.bands) {
        nlohmann::json u = nlohmann::json::array();
        for (const auto& q : unit) u.push_back(q);
        bands.push_back(std::move(u));
    }
    j["bands"] = std::move(bands);
    nlohmann::json chains = nlohmann::json::array();
    for (const auto& b : r.chains) {
        nlohmann::json c;
        c["seed"] = b.seed;
        c["best_sweep"] = b.sweep;
        c["best_complete_loglik"] = b.complete_loglik;
        c["best_component_probs"] = b.component_probs;
        c["residual_acceptance"] = b.residual_acceptance;
        nlohmann::json atoms = nlohmann::json::array();
        for (const auto& a : b.atoms) atoms.push_back(atom_json(a));
        c["best_atoms"] = std::move(atoms);
        chains.push_back(std::move(c));
    }
    j["chains"] = std::move(chains);
    return j.dump() + "\n";
}

FitRecord parse_fit_record(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw InvalidInput(fmt::format("fit record is not valid JSON: {}", e.what()));
    }
    try {
        FitRecord r;
        r.seed = j.at("seed").get<std::uint64_t>();
        r.fingerprint = j.at("fingerprint").get<std::string>();
        r.unit_ids = j.at("unit_ids").get<std::vector<std::string>>();
        r.inclusion = j.at("inclusion").get<std::vector<double>>();
        r.bands.grid.start = j.at("grid_start").get<int>();
        const auto G = j.at("grid_size").get<std::size_t>();
        for (std::size_t g = 0; g < G; ++g) r.bands.grid.times.push_back(r.bands.grid.start + static_cast<int>(g));
        r.bands.unit_ids = r.unit_ids;
        for (const auto& u : j.at("bands")) r.bands.bands.push_back(u.get<std::vector<std::array<double, 3>>>());
        for (const auto& c : j.at("chains")) {
            FitRecord::ChainBest b;
            b.seed = c.at("seed").get<std::uint64_t>();
            b.sweep = c.at("best_sweep").get<std::size_t>();
            b.complete_loglik = c.at("best_complete_loglik").get<double>();
            b.component_probs = c.at("best_component_probs").get<std::array<double, 3>>();
            b.residual_acceptance = c.at("residual_acceptance").get<double>();
            for (const auto& a : c.at("best_atoms")) b.atoms.push_back(atom_from_json(a));
            r.chains.push_back(std::move(b));
        }
        if (r.inclusion.size() != r.unit_ids.size() || r.bands.bands.size() != r.unit_ids.size() || r.chains.empty())
            throw InvalidInput("fit record is inconsistent");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(fmt::format("fit record is missing fields: {}", e.what()));
    }
}

// ---- reporting ----

std::string discovery_line(std::span<const double> inclusion, double threshold) {
    const auto k = std::count_if(inclusion.begin(), inclusion.end(), [&](double p) { return p >= threshold; });
    return fmt::format("{} of {} units flagged at p_i >= {}", k, inclusion.size(), threshold);
}

std::string inclusion_table(const std::vector<std::string>& ids, std::span<const double> p, const std::vector<double>* se,
                            const std::string& header_line) {
    std::string out = header_line + "\n";
    out += se ? "unit_id,p_i,mc_stderr,flag50,flag90\n" : "unit_id,p_i,flag50,flag90\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int f50 = p[i] >= 0.5, f90 = p[i] >= 0.9;
        if (se) out += fmt::format("{},{},{},{},{}\n", ids[i], p[i], (*se)[i], f50, f90);
        else out += fmt::format("{},{},{},{}\n", ids[i], p[i], f50, f90);
    }
    return out;
}

std::string bands_table(const TrajectoryBands& b, const std::string& header_line) {
    std::string out = header_line + "\nunit_id,time,q05,q50,q95\n";
    for (std::size_t i = 0; i < b.unit_ids.size(); ++i)
        for (std::size_t g = 0; g < b.grid.size(); ++g)
            out += fmt::format("{},{},{},{},{}\n", b.unit_ids[i], b.grid.times[g], b.bands[i][g][0], b.bands[i][g][1], b.bands[i][g][2]);
    return out;
}

ReportFiles report_summaries(const FitRecord& r, std::span<const double> thresholds) {
    if (r.unit_ids.empty()) throw InvalidInput("fit record has no units");
    ReportFiles f;
    const auto head = provenance_line(r.seed, r.fingerprint);
    f.inclusion = inclusion_table(r.unit_ids, r.inclusion, nullptr, head);
    f.bands = bands_table(r.bands, head);
    f.discoveries = head + "\n";
    for (double t : thresholds) f.discoveries += discovery_line(r.inclusion, t) + "\n";
    return f;
}

// ---- MLE and frozen rerun ----

namespace {

MleTrajectorySet take_top(const std::vector<TrajectoryAtom>& atoms, const std::array<double, 3>& probs, std::size_t sweep,
                          std::size_t K) {
    if (atoms.empty()) throw InvalidInput("chain has no retained trajectory atoms");
    if (K < 1) throw UsageError("K must be at least 1");
    MleTrajectorySet s;
    s.component_probs = probs;
    s.source_sweep = sweep;
    if (K > atoms.size()) {
        s.warning = fmt::format("K = {} exceeds the {} available atoms; using {}", K, atoms.size(), atoms.size());
        K = atoms.size();
    }
    s.K = K;
    s.atoms.assign(atoms.begin(), atoms.begin() + static_cast<std::ptrdiff_t>(K));
    std::stable_sort(s.atoms.begin(), s.atoms.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
    return s;
}

} // namespace

MleTrajectorySet mle_trajectory_set(const ChainOutput& chain, std::size_t K) {
    if (chain.complete_loglik.empty()) throw InvalidInput("chain has no retained sweeps");
    return take_top(chain.best_atoms, chain.best_component_probs, chain.best_sweep, K);
}

MleTrajectorySet mle_trajectory_set(const FitRecord::ChainBest& best, std::size_t K) {
    return take_top(best.atoms, best.component_probs, best.sweep, K);
}

FrozenAtoms MleTrajectorySet::frozen() const {
    // F-weight = pi_kind / (pi_flat + pi_gp) * within-set weight.
    const double alt = component_probs[1] + component_probs[2];
    FrozenAtoms f;
    for (const auto& a : atoms) {
        const double pk = a.kind == TrajectoryKind::flat ? component_probs[1] : component_probs[2];
        if (!(pk > 0.0)) throw NumericalError("frozen atom belongs to a component with zero probability");
        TrajectoryAtom b = a;
        b.weight = a.weight * alt / pk;
        f.atoms.push_back(std::move(b));
    }
    return f;
}

MembershipTable frozen_cluster_rerun(const SeriesPanel& panel, const MleTrajectorySet& frozen, const FdpConfig& config,
                                     std::size_t n_burn, std::size_t n_keep, std::uint64_t seed) {
    const auto atoms = frozen.frozen();
    const auto chain = run_chain(panel, config, n_burn, n_keep, seed, &atoms);
    MembershipTable t;
    t.unit_ids = chain.unit_ids;
    t.n_frozen = atoms.atoms.size();
    for (const auto& row : chain.membership) {
        std::vector<double> pct;
        for (std::size_t c : row) pct.push_back(100.0 * static_cast<double>(c) / static_cast<double>(n_keep));
        t.percent.push_back(std::move(pct));
    }
    return t;
}

std::string membership_csv(const MembershipTable& t, const std::string& header_line) {
    std::string out = header_line + "\nunit_id";
    for (std::size_t j = 0; j < t.n_frozen; ++j) out += fmt::format(",cluster{}", j + 1);
    out += ",other,null\n";
    for (std::size_t i = 0; i < t.unit_ids.size(); ++i) {
        out += t.unit_ids[i];
        for (double x : t.percent[i]) out += fmt::format(",{}", x);
        out += "\n";
    }
    return out;
}

std::string membership_text(const MembershipTable& t) {
    std::size_t w = 7;
    for (const auto& id : t.unit_ids) w = std::max(w, id.size());
    std::string out = fmt::format("{:<{}}", "unit_id", w);
    for (std::size_t j = 0; j < t.n_frozen; ++j) out += fmt::format(" {:>5}", fmt::format("#{}", j + 1));
    out += fmt::format(" {:>5} {:>5}\n", "other", "null");
    for (std::size_t i = 0; i < t.unit_ids.size(); ++i) {
        out += fmt::format("{:<{}}", t.unit_ids[i], w);
        for (double x : t.percent[i]) out += fmt::format(" {:>5.0f}", x);
        out += "\n";
    }
    return out;
}

// ---- scenarios ----

SimulatedPanel simulate_scenario(const RunConfig& c, std::uint64_t seed) {
    c.require_known({"kind", "N", "T", "start_time", "component", "phis", "vs", "p_true", "shift", "shift_sigma2", "kappa1",
                     "kappa2", "noise_seed", "alpha", "truncation", "residual_variance", "d", "D", "a", "b", "nu",
                     "trajectory_truncation"});
    const auto kind = c.get("kind", "mixture");
    const auto N = c.get_int("N", 0);
    const auto T = c.get_int("T", 0);
    if (N < 1 || T < 1) throw UsageError("scenario needs N >= 1 and T >= 1");
    GpKernelParams kernel{c.get_double("kappa1", 1.25), c.get_double("kappa2", 13.0)};
    try {
        if (kind == "mixture") {
            MixtureScenario s;
            s.N = static_cast<std::size_t>(N);
            s.T = static_cast<int>(T);
            s.start_time = static_cast<int>(c.get_int("start_time", 1));
            for (const auto& comp : c.get_all("component")) {
                std::istringstream in(comp);
                double phi = 0, v = 0, prob = 0;
                if (!(in >> phi >> v >> prob)) throw UsageError(fmt::format("component '{}' must be 'phi v probability'", comp));
                s.components.push_back({ArParams{phi, v}, prob});
            }
            if (c.has("phis") || c.has("vs")) {
                if (!s.components.empty()) throw UsageError("use either component lines or phis/vs, not both");
                const auto phis = c.get_doubles("phis");
                const auto vs = c.get_doubles("vs");
                s.components = grid_components(phis, vs);
            }
            const double p = c.get_double("p_true", 0.0);
            if (p > 0.0) {
                MeanShift m;
                m.p_true = p;
                const auto src = c.get("shift", "constant");
                if (src == "constant") m.source = ShiftSource::constant;
                else if (src == "gp") m.source = ShiftSource::gp;
                else throw UsageError(fmt::format("shift must be 'constant' or 'gp', got '{}'", src));
                m.sigma2 = c.get_double("shift_sigma2", 1.0);
                m.kernel = kernel;
                s.mean_shift = m;
            }
            validate(s);
            return generate_mixture_panel(s, seed);
        }
        if (kind == "prior_study") {
            ParametricPrior base;
            base.d = c.get_double("d", base.d);
            base.D = c.get_double("D", base.D);
            base.a = c.get_double("a", base.a);
            base.b = c.get_double("b", base.b);
            const double alpha = c.get_double("alpha", 10.0 / std::log(static_cast<double>(std::max<long long>(N, 2))));
            const auto noise_seed = static_cast<std::uint64_t>(c.get_int("noise_seed", static_cast<long long>(seed)));
            const int L = static_cast<int>(c.get_int("truncation", 60));
            // Residual law G: one draw from the DP prior, tied to the noise seed, scaled
            // to the marginal variance of standardized data (0 keeps it unscaled).
            auto g = init_residual_state(1, alpha, base, L, derive_seed(noise_seed, {0x6})).stick;
            const double target = c.get_double("residual_variance", 1.0);
            if (target > 0.0) g = scale_to_marginal_variance(std::move(g), target);
            TimeGrid grid;
            grid.start = static_cast<int>(c.get_int("start_time", 1));
            for (long long t = 0; t < T; ++t) grid.times.push_back(grid.start + static_cast<int>(t));
            const double nu = c.get_double("nu", 15.0 / std::log(static_cast<double>(std::max<long long>(N, 2))));
            const int traj_L = static_cast<int>(c.get_int("trajectory_truncation", 60));
            return generate_prior_study(c.get_double("p_true", 0.2), g, static_cast<std::size_t>(N), grid, kernel, nu, traj_L, seed,
                                        noise_seed);
        }
    } catch (const UsageError&) {
        throw;
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    } catch (const DomainError& e) {
        throw UsageError(e.what());
    }
    throw UsageError(fmt::format("scenario kind must be 'mixture' or 'prior_study', got '{}'", kind));
}

std::string truth_table(const SeriesPanel& panel, const TruthLabels& truth, const std::string& header_line) {
    std::string out = header_line + "\nunit_id,nonnull,component\n";
    for (std::size_t i = 0; i < panel.size(); ++i)
        out += fmt::format("{},{},{}\n", panel.series[i].unit_id, int(truth.nonnull[i]), truth.component[i]);
    return out;
}

// ---- CLI ----

namespace {

std::string read_file(const std::filesystem::path& p, std::string_view what) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InvalidInput(fmt::format("cannot open {} '{}'", what, p.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput(fmt::format("cannot write '{}'", p.string()));
    out << text;
    if (!out) throw InvalidInput(fmt::format("failed writing '{}'", p.string()));
}

struct Options {
    std::string input;
    std::string output_dir = ".";
    std::uint64_t seed = 1;
    std::string config;
    std::string scenario;
    std::size_t burn = 1000;
    std::size_t keep = 2000;
    std::size_t chains = 1;
    double threshold = 0.5;
};

// Settings that never change results (thread count) stay out of the fingerprint.
const std::vector<std::string_view> kNotFingerprinted = {"threads"};

RunConfig load_config(const Options& o) { return o.config.empty() ? RunConfig{} : RunConfig::from_file(o.config); }

std::string input_digest(const std::string& bytes) { return fmt::format("{:016x}", fnv1a64(bytes)); }

SeriesPanel load_panel(const Options& o, const RunConfig& c, RunConfig& fp) {
    if (o.input.empty()) throw UsageError("--input is required");
    const auto bytes = read_file(o.input, "panel file");
    fp.set("input.digest", input_digest(bytes));
    std::istringstream in(bytes);
    return read_panel(in, static_cast<int>(c.get_int("min_length", 1)));
}

std::filesystem::path out_dir(const Options& o) {
    std::filesystem::path d(o.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(d, ec);
    if (ec) throw InvalidInput(fmt::format("cannot create output directory '{}'", d.string()));
    return d;
}

int cmd_standardize(const Options& o, std::ostream& out) {
    auto c = load_config(o);
    c.require_known({"min_length"});
    RunConfig fp = c;
    fp.set("command", "standardize");
    const auto panel = load_panel(o, c, fp);
    const auto z = cdf_standardize(panel);
    std::ostringstream s;
    write_panel(s, z, {fmt::format("seed={} fingerprint={}", o.seed, fp.fingerprint(kNotFingerprinted))});
    write_file(out_dir(o) / "standardized.csv", s.str());
    out << fmt::format("standardized {} units ({} observations pooled)\n", z.size(),
                       std::accumulate(z.series.begin(), z.series.end(), std::size_t{0},
                                       [](std::size_t n, const auto& y) { return n + y.values.size(); }));
    return 0;
}

int cmd_fit_parametric(const Options& o, std::ostream& out, std::ostream& err) {
    auto c = load_config(o);
    c.require_known({"d", "D", "a", "b", "sigma2", "draws", "threads", "min_length"});
    RunConfig fp = c;
    fp.set("command", "fit-parametric");
    fp.set("threshold", fmt::format("{}", o.threshold));
    const auto panel = load_panel(o, c, fp);
    const auto prior = parametric_prior_from(c);
    const auto n_draws = c.get_int("draws", 5000);
    if (n_draws < 100) throw UsageError("draws must be at least 100");
    const auto fit = fit_parametric(panel, prior, static_cast<std::size_t>(n_draws), o.seed, static_cast<unsigned>(c.get_int("threads", 0)));
    const auto head = provenance_line(o.seed, fp.fingerprint(kNotFingerprinted));
    const auto dir = out_dir(o);
    write_file(dir / "inclusion.csv", inclusion_table(fit.inclusion.unit_ids, fit.inclusion.p, &fit.inclusion.mc_stderr, head));
    std::string summary = head + "\n";
    summary += fmt::format("p_hat {}\n", fit.p_hat);
    summary += fmt::format("draws {}\neffective_sample_size {}\n", fit.n_draws, fit.effective_sample_size);
    if (fit.warning) summary += fmt::format("warning {}\n", *fit.warning);
    for (double t : {0.5, 0.9}) summary += discovery_line(fit.inclusion.p, t) + "\n";
    if (o.threshold != 0.5 && o.threshold != 0.9) summary += discovery_line(fit.inclusion.p, o.threshold) + "\n";
    write_file(dir / "summary.txt", summary);
    if (fit.warning) err << "warning: " << *fit.warning << "\n";
    out << fmt::format("p_hat = {:.4f}; {}\n", fit.p_hat, discovery_line(fit.inclusion.p, o.threshold));
    return 0;
}

const std::vector<std::string_view> kNpKeys = {
    "kappa1", "kappa2", "alpha", "nu", "d", "D", "a", "b", "residual_truncation", "gp_truncation", "flat_truncation",
    "checkpoint_stride", "band_draws", "top_atoms", "mh_steps", "threads", "min_length", "K", "rerun_burn", "rerun_keep", "fit"};

int cmd_fit_np(const Options& o, std::ostream& out) {
    auto c = load_config(o);
    c.require_known(kNpKeys);
    RunConfig fp = c;
    fp.set("command", "fit-np");
    fp.set("burn", std::to_string(o.burn));
    fp.set("keep", std::to_string(o.keep));
    fp.set("chains", std::to_string(o.chains));
    const auto panel = load_panel(o, c, fp);
    const auto config = fdp_config_from(c, panel.size());
    if (o.burn < 1 || o.keep < 1 || o.chains < 1) throw UsageError("--burn, --keep and --chains must be at least 1");
    const auto fit = fit_nonparametric(panel, config, o.burn, o.keep, o.chains, o.seed);
    const auto fingerprint = fp.fingerprint(kNotFingerprinted);
    const auto head = provenance_line(o.seed, fingerprint);
    const auto dir = out_dir(o);
    for (std::size_t k = 0; k < fit.chains.size(); ++k) {
        nlohmann::json h;
        h["seed"] = o.seed;
        h["fingerprint"] = fingerprint;
        h["chain"] = k;
        h["chain_seed"] = fit.chains[k].seed;
        std::string lines = h.dump() + "\n";
        for (const auto& cp : fit.chains[k].sweeps) lines += checkpoint_line(cp) + "\n";
        write_file(dir / fmt::format("sweeps_chain{}.jsonl", k), lines);
    }
    const auto record = make_fit_record(fit, o.seed, fingerprint);
    write_file(dir / "fit.json", fit_record_json(record));
    write_file(dir / "inclusion.csv", inclusion_table(record.unit_ids, record.inclusion, nullptr, head));
    out << discovery_line(record.inclusion, o.threshold) << "\n";
    return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
    if (o.input.empty()) throw UsageError("--input (a fit.json) is required");
    const auto record = parse_fit_record(read_file(o.input, "fit record"));
    std::vector<double> thresholds{0.5, 0.9};
    if (o.threshold != 0.5 && o.threshold != 0.9) thresholds.push_back(o.threshold);
    const auto files = report_summaries(record, thresholds);
    const auto dir = out_dir(o);
    write_file(dir / "report_inclusion.csv", files.inclusion);
    write_file(dir / "report_bands.csv", files.bands);
    write_file(dir / "report_discoveries.txt", files.discoveries);
    out << discovery_line(record.inclusion, o.threshold) << "\n";
    return 0;
}

int cmd_cluster_mle(const Options& o, std::ostream& out, std::ostream& err) {
    auto c = load_config(o);
    c.require_known(kNpKeys);
    RunConfig fp = c;
    fp.set("command", "cluster-mle");
    fp.set("burn", std::to_string(o.burn));
    fp.set("keep", std::to_string(o.keep));
    const auto panel = load_panel(o, c, fp);
    const auto config = fdp_config_from(c, panel.size());
    const auto K = c.get_int("K", 17);
    if (K < 1) throw UsageError("K must be at least 1");

    MleTrajectorySet set;
    if (c.has("fit")) {
        const auto bytes = read_file(c.get("fit", ""), "fit record");
        fp.set("fit", input_digest(bytes));
        const auto record = parse_fit_record(bytes);
        const auto best = std::max_element(record.chains.begin(), record.chains.end(),
                                           [](const auto& a, const auto& b) { return a.complete_loglik < b.complete_loglik; });
        set = mle_trajectory_set(*best, static_cast<std::size_t>(K));
    } else {
        const auto chain = run_chain(panel, config, o.burn, o.keep, derive_seed(o.seed, {0xC4A1, 0}));
        set = mle_trajectory_set(chain, static_cast<std::size_t>(K));
    }
    if (set.warning) err << "warning: " << *set.warning << "\n";
    const auto rerun_burn = static_cast<std::size_t>(c.get_int("rerun_burn", static_cast<long long>(o.burn)));
    const auto rerun_keep = static_cast<std::size_t>(c.get_int("rerun_keep", static_cast<long long>(o.keep)));
    const auto table = frozen_cluster_rerun(panel, set, config, rerun_burn, rerun_keep, derive_seed(o.seed, {0xF2}));

    const auto head = provenance_line(o.seed, fp.fingerprint(kNotFingerprinted));
    const auto dir = out_dir(o);
    write_file(dir / "membership.csv", membership_csv(table, head));
    write_file(dir / "membership.txt", head + "\n" + membership_text(table));
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : set.atoms) atoms.push_back(atom_json(a));
    nlohmann::json j;
    j["seed"] = o.seed;
    j["fingerprint"] = fp.fingerprint(kNotFingerprinted);
    j["source_sweep"] = set.source_sweep;
    j["K"] = set.K;
    j["component_probs"] = set.component_probs;
    j["atoms"] = std::move(atoms);
    write_file(dir / "mle_atoms.json", j.dump() + "\n");
    out << fmt::format("froze {} atoms from retained sweep {}\n", set.K, set.source_sweep);
    return 0;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    if (o.scenario.empty()) throw UsageError("--scenario is required");
    const auto bytes = read_file(o.scenario, "scenario file");
    std::istringstream in(bytes);
    auto sc = RunConfig::parse(in);
    RunConfig fp = sc;
    fp.set("command", "simulate");
    const auto sim = simulate_scenario(sc, o.seed);
    const auto fingerprint = fp.fingerprint();
    const auto dir = out_dir(o);
    std::ostringstream s;
    write_panel(s, sim.panel, {fmt::format("seed={} fingerprint={}", o.seed, fingerprint)});
    write_file(dir / "panel.csv", s.str());
    write_file(dir / "truth.csv", truth_table(sim.panel, sim.truth, provenance_line(o.seed, fingerprint)));
    const auto k = std::count(sim.truth.nonnull.begin(), sim.truth.nonnull.end(), true);
    out << fmt::format("simulated {} units ({} nonnull)\n", sim.panel.size(), k);
    return 0;
}

} // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian tests for mean shifts in panels of AR(1) series"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "random seed (all randomness derives from it)");
        sub->add_option("--output-dir", o.output_dir, "directory for output files");
        sub->add_option("--config", o.config, "key = value settings file");
    };
    auto* standardize = app.add_subcommand("standardize", "pooled CDF standardization of a panel");
    auto* fit_par = app.add_subcommand("fit-parametric", "homogeneous AR(1) fit by importance sampling");
    auto* fit_np = app.add_subcommand("fit-np", "nonparametric fit by blocked Gibbs sampling");
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic panel from a scenario file");
    auto* report = app.add_subcommand("report", "inclusion table, trajectory bands and discovery counts from fit.json");
    auto* cluster = app.add_subcommand("cluster-mle", "membership table over the top trajectory atoms");
    for (auto* sub : {standardize, fit_par, fit_np, report, cluster}) sub->add_option("--input", o.input, "input file");
    for (auto* sub : {standardize, fit_par, fit_np, simulate, report, cluster}) common(sub);
    for (auto* sub : {fit_par, fit_np, report}) sub->add_option("--threshold", o.threshold, "discovery threshold on p_i");
    for (auto* sub : {fit_np, cluster}) {
        sub->add_option("--burn", o.burn, "burn-in sweeps");
        sub->add_option("--keep", o.keep, "retained sweeps");
    }
    fit_np->add_option("--chains", o.chains, "independent chains");
    simulate->add_option("--scenario", o.scenario, "scenario file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }
    try {
        if (!(o.threshold > 0.0 && o.threshold <= 1.0)) throw UsageError("--threshold must lie in (0, 1]");
        if (*standardize) return cmd_standardize(o, out);
        if (*fit_par) return cmd_fit_parametric(o, out, err);
        if (*fit_np) return cmd_fit_np(o, out);
        if (*simulate) return cmd_simulate(o, out);
        if (*report) return cmd_report(o, out);
        if (*cluster) return cmd_cluster_mle(o, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidInput& e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DomainError& e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}

} // namespace armt
