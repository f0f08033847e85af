#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace armt {

/// One unit's observation history. Times are integer years, strictly increasing.
struct ObservedSeries {
    std::string unit_id;
    std::vector<int> times;
    std::vector<double> values;
};

/// The N x (variable T) panel. Every member has at least `min_length` points.
struct SeriesPanel {
    std::vector<ObservedSeries> series;
    int min_length = 1;

    std::size_t size() const { return series.size(); }
    bool empty() const { return series.empty(); }
};

/// Stationary AR(1) parameters: y_t = phi * y_{t-1} + N(0, v).
struct ArParams {
    double phi = 0.0;
    double v = 1.0;
};

/// Dense stationary covariance over a set of observation times.
struct Ar1Covariance {
    Eigen::MatrixXd matrix;
};

/// Variance of the nonzero mean shift m_i ~ N(0, sigma2).
struct MeanShiftScale {
    double sigma2 = 1.0;
};

void validate(const ArParams& theta);
void validate(const ObservedSeries& y);
void validate(const SeriesPanel& panel);

/// Builds a panel from raw series, dropping any unit shorter than `min_length`.
/// Throws InvalidInput on duplicate ids or malformed series.
SeriesPanel admit_panel(std::vector<ObservedSeries> series, int min_length);

/// v / (1 - phi^2).
double stationary_variance(const ArParams& theta);

/// entry(i,j) = stationary_variance * phi^{|t_i - t_j|}.
Ar1Covariance build_ar1_covariance(const ArParams& theta, std::span<const int> times);

/// Sufficient statistics of a series under Sigma_theta, from one pass of the
/// prediction-error recursion. With Sigma^{-1} = L^T D^{-1} L:
///   quad   = y^T Sigma^{-1} y
///   cross  = 1^T Sigma^{-1} y
///   ones   = 1^T Sigma^{-1} 1
///   logdet = log |Sigma|
struct Ar1Stats {
    double quad = 0.0;
    double cross = 0.0;
    double ones = 0.0;
    double logdet = 0.0;
    std::size_t n = 0;
};

/// Gaps between times are handled exactly: across a gap of g steps the
/// one-step predictor is phi^g * y_prev with variance s * (1 - phi^{2g}).
Ar1Stats ar1_stats(std::span<const int> times, std::span<const double> values, const ArParams& theta);

/// log N(values | 0, Sigma_theta) without parameter validation (hot loops).
double ar1_loglik_unchecked(std::span<const int> times, std::span<const double> values,
                            const ArParams& theta);

/// log N(values - offset | 0, Sigma_theta); offset[k] is subtracted from values[k].
double ar1_loglik_offset(std::span<const int> times, std::span<const double> values,
                         std::span<const double> offset, const ArParams& theta);

double ar1_loglik(const ObservedSeries& y, const ArParams& theta);

/// log N(y | 0, Sigma_theta + sigma2 * 1 1^T), via a rank-one update of the null solve.
double mean_shift_loglik(const ObservedSeries& y, const ArParams& theta, const MeanShiftScale& scale);

double log_conditional_bayes_factor(const ObservedSeries& y, const ArParams& theta,
                                    const MeanShiftScale& scale);
double conditional_bayes_factor(const ObservedSeries& y, const ArParams& theta,
                                const MeanShiftScale& scale);

/// Tridiagonal Sigma_theta^{-1}: `diag` has length T, `off` length T-1 (entry (k, k+1)).
struct TridiagonalPrecision {
    std::vector<double> diag;
    std::vector<double> off;
};
TridiagonalPrecision ar1_precision(std::span<const int> times, const ArParams& theta);

double normal_cdf(double x);
/// Inverse standard normal CDF, absolute error below 1e-9 on (0,1).
double normal_quantile(double p);

/// Pools every observation, replaces each by Phi^{-1}((rank - 0.5) / n) using
/// average ranks for ties. Throws InvalidInput on an empty panel.
SeriesPanel cdf_standardize(const SeriesPanel& panel);

} // namespace armt
