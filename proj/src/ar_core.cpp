#include "armt/ar_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "armt/error.hpp"

namespace armt {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_times(std::span<const int> times) {
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (times[k] <= times[k - 1]) {
            throw InvalidInput(fmt::format("observation times must be strictly increasing (position {})", k));
        }
    }
}

} // namespace

void validate(const ArParams& theta) {
    if (!(std::abs(theta.phi) < 1.0)) throw DomainError(fmt::format("AR(1) requires |phi| < 1, got {}", theta.phi));
    if (!(theta.v > 0.0) || !std::isfinite(theta.v)) throw DomainError(fmt::format("AR(1) requires v > 0, got {}", theta.v));
}

void validate(const ObservedSeries& y) {
    if (y.times.empty()) throw InvalidInput(fmt::format("unit '{}' has no observations", y.unit_id));
    if (y.times.size() != y.values.size()) {
        throw InvalidInput(fmt::format("unit '{}' has {} times but {} values", y.unit_id, y.times.size(), y.values.size()));
    }
    check_times(y.times);
    for (double x : y.values) {
        if (!std::isfinite(x)) throw InvalidInput(fmt::format("unit '{}' has a non-finite value", y.unit_id));
    }
}

void validate(const SeriesPanel& panel) {
    if (panel.min_length < 1) throw InvalidInput("panel min_length must be positive");
    std::unordered_set<std::string> seen;
    for (const auto& s : panel.series) {
        validate(s);
        if (static_cast<int>(s.times.size()) < panel.min_length) {
            throw InvalidInput(fmt::format("unit '{}' is shorter than min_length {}", s.unit_id, panel.min_length));
        }
        if (!seen.insert(s.unit_id).second) throw InvalidInput(fmt::format("duplicate unit id '{}'", s.unit_id));
    }
}

SeriesPanel admit_panel(std::vector<ObservedSeries> series, int min_length) {
    SeriesPanel panel;
    panel.min_length = min_length;
    for (auto& s : series) {
        if (static_cast<int>(s.times.size()) >= min_length) panel.series.push_back(std::move(s));
    }
    validate(panel);
    return panel;
}

double stationary_variance(const ArParams& theta) {
    validate(theta);
    return theta.v / (1.0 - theta.phi * theta.phi);
}

Ar1Covariance build_ar1_covariance(const ArParams& theta, std::span<const int> times) {
    validate(theta);
    check_times(times);
    const double s = stationary_variance(theta);
    const auto n = static_cast<Eigen::Index>(times.size());
    Ar1Covariance cov{Eigen::MatrixXd(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        cov.matrix(i, i) = s;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double c = s * std::pow(theta.phi, std::abs(times[i] - times[j]));
            cov.matrix(i, j) = c;
            cov.matrix(j, i) = c;
        }
    }
    return cov;
}

Ar1Stats ar1_stats(std::span<const int> times, std::span<const double> values, const ArParams& theta) {
    Ar1Stats st;
    st.n = values.size();
    if (values.empty()) return st;
    const double phi = theta.phi;
    const double s = theta.v / (1.0 - phi * phi);
    const double log_v = std::log(theta.v);

    st.quad = values[0] * values[0] / s;
    st.cross = values[0] / s;
    st.ones = 1.0 / s;
    st.logdet = std::log(s);
    for (std::size_t k = 1; k < values.size(); ++k) {
        const int gap = times[k] - times[k - 1];
        double rho = phi;
        double d = theta.v;
        double log_d = log_v;
        if (gap != 1) {
            rho = std::pow(phi, gap);
            d = s * (1.0 - rho * rho);
            log_d = std::log(d);
        }
        const double e = values[k] - rho * values[k - 1];
        const double one = 1.0 - rho;
        st.quad += e * e / d;
        st.cross += one * e / d;
        st.ones += one * one / d;
        st.logdet += log_d;
    }
    return st;
}

double ar1_loglik_unchecked(std::span<const int> times, std::span<const double> values, const ArParams& theta) {
    const double phi = theta.phi;
    const double s = theta.v / (1.0 - phi * phi);
    const double log_v = std::log(theta.v);
    double quad = values[0] * values[0] / s;
    double logdet = std::log(s);
    for (std::size_t k = 1; k < values.size(); ++k) {
        const int gap = times[k] - times[k - 1];
        if (gap == 1) {
            const double e = values[k] - phi * values[k - 1];
            quad += e * e / theta.v;
            logdet += log_v;
        } else {
            const double rho = std::pow(phi, gap);
            const double d = s * (1.0 - rho * rho);
            const double e = values[k] - rho * values[k - 1];
            quad += e * e / d;
            logdet += std::log(d);
        }
    }
    return -0.5 * (static_cast<double>(values.size()) * kLog2Pi + logdet + quad);
}

double ar1_loglik_offset(std::span<const int> times, std::span<const double> values,
                         std::span<const double> offset, const ArParams& theta) {
    const double phi = theta.phi;
    const double s = theta.v / (1.0 - phi * phi);
    const double log_v = std::log(theta.v);
    double prev = values[0] - offset[0];
    double quad = prev * prev / s;
    double logdet = std::log(s);
    for (std::size_t k = 1; k < values.size(); ++k) {
        const double cur = values[k] - offset[k];
        const int gap = times[k] - times[k - 1];
        if (gap == 1) {
            const double e = cur - phi * prev;
            quad += e * e / theta.v;
            logdet += log_v;
        } else {
            const double rho = std::pow(phi, gap);
            const double d = s * (1.0 - rho * rho);
            const double e = cur - rho * prev;
            quad += e * e / d;
            logdet += std::log(d);
        }
        prev = cur;
    }
    return -0.5 * (static_cast<double>(values.size()) * kLog2Pi + logdet + quad);
}

double ar1_loglik(const ObservedSeries& y, const ArParams& theta) {
    validate(theta);
    validate(y);
    return ar1_loglik_unchecked(y.times, y.values, theta);
}

namespace {

double null_loglik(const Ar1Stats& st) {
    return -0.5 * (static_cast<double>(st.n) * kLog2Pi + st.logdet + st.quad);
}

// Matrix determinant lemma + Sherman-Morrison for Sigma + sigma2 * 1 1^T.
double shifted_loglik(const Ar1Stats& st, double sigma2) {
    const double denom = 1.0 + sigma2 * st.ones;
    const double quad = st.quad - sigma2 * st.cross * st.cross / denom;
    return -0.5 * (static_cast<double>(st.n) * kLog2Pi + st.logdet + std::log(denom) + quad);
}

void validate(const MeanShiftScale& scale) {
    if (!(scale.sigma2 >= 0.0) || !std::isfinite(scale.sigma2)) {
        throw DomainError(fmt::format("mean-shift variance must be >= 0, got {}", scale.sigma2));
    }
}

} // namespace

double mean_shift_loglik(const ObservedSeries& y, const ArParams& theta, const MeanShiftScale& scale) {
    validate(theta);
    validate(scale);
    validate(y);
    if (scale.sigma2 == 0.0) return ar1_loglik_unchecked(y.times, y.values, theta);
    return shifted_loglik(ar1_stats(y.times, y.values, theta), scale.sigma2);
}

double log_conditional_bayes_factor(const ObservedSeries& y, const ArParams& theta, const MeanShiftScale& scale) {
    validate(theta);
    validate(scale);
    validate(y);
    if (scale.sigma2 == 0.0) return 0.0;
    const Ar1Stats st = ar1_stats(y.times, y.values, theta);
    return shifted_loglik(st, scale.sigma2) - null_loglik(st);
}

double conditional_bayes_factor(const ObservedSeries& y, const ArParams& theta, const MeanShiftScale& scale) {
    return std::exp(log_conditional_bayes_factor(y, theta, scale));
}

TridiagonalPrecision ar1_precision(std::span<const int> times, const ArParams& theta) {
    const std::size_t n = times.size();
    TridiagonalPrecision prec;
    prec.diag.assign(n, 0.0);
    prec.off.assign(n > 0 ? n - 1 : 0, 0.0);
    if (n == 0) return prec;
    const double s = theta.v / (1.0 - theta.phi * theta.phi);
    // Sigma^{-1} = L^T D^{-1} L with L unit lower-bidiagonal, L(k, k-1) = -rho_k.
    prec.diag[0] = 1.0 / s;
    for (std::size_t k = 1; k < n; ++k) {
        const int gap = times[k] - times[k - 1];
        const double rho = gap == 1 ? theta.phi : std::pow(theta.phi, gap);
        const double d = gap == 1 ? theta.v : s * (1.0 - rho * rho);
        prec.diag[k] += 1.0 / d;
        prec.diag[k - 1] += rho * rho / d;
        prec.off[k - 1] = -rho / d;
    }
    return prec;
}

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError(fmt::format("normal quantile needs p in (0,1), got {}", p));
    // Acklam's rational approximation (relative error ~1e-9) ...
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // ... then one Halley step against erfc.
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

SeriesPanel cdf_standardize(const SeriesPanel& panel) {
    if (panel.empty()) throw InvalidInput("cannot standardize an empty panel");
    struct Slot {
        double value;
        std::size_t unit;
        std::size_t pos;
    };
    std::vector<Slot> pooled;
    for (std::size_t i = 0; i < panel.series.size(); ++i) {
        const auto& vals = panel.series[i].values;
        for (std::size_t k = 0; k < vals.size(); ++k) pooled.push_back({vals[k], i, k});
    }
    if (pooled.empty()) throw InvalidInput("cannot standardize a panel with no observations");
    std::stable_sort(pooled.begin(), pooled.end(), [](const Slot& a, const Slot& b) { return a.value < b.value; });

    SeriesPanel out = panel;
    const double n = static_cast<double>(pooled.size());
    std::size_t start = 0;
    while (start < pooled.size()) {
        std::size_t stop = start + 1;
        while (stop < pooled.size() && pooled[stop].value == pooled[start].value) ++stop;
        // 1-based ranks start+1 .. stop share their average.
        const double avg_rank = 0.5 * (static_cast<double>(start + 1) + static_cast<double>(stop));
        const double z = normal_quantile((avg_rank - 0.5) / n);
        for (std::size_t k = start; k < stop; ++k) out.series[pooled[k].unit].values[pooled[k].pos] = z;
        start = stop;
    }
    return out;
}

} // namespace armt
