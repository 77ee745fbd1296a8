#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Nothing here calls the library routine it checks.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "anmi/survey.hpp"

namespace anmi::oracle {

/// Phi(x) evaluated in 50-digit arithmetic and rounded to double.
double normal_cdf(double x);

/// Largest |normal_cdf(x) - oracle| over an even grid on [lo, hi].
double max_cdf_error(double lo, double hi, int points);

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Mean and variance of N(mean, 1) restricted to (lower, upper), in 50-digit
/// arithmetic. Either bound may be infinite.
Moments truncated_normal_moments(double mean, double lower, double upper);

/// Maximizer of sum_i w_i log Pr(y_i | x_i' b) by GSL's BFGS2 with an
/// independently coded gradient. Starts at zero.
Eigen::VectorXd probit_optimum(const Eigen::MatrixXd& design, const std::vector<int>& y,
                               const std::vector<double>& w);

/// Exact design variance of the HT total for stratified SRSWOR by listing
/// every possible sample (only for tiny strata).
double enumerated_ht_variance(const StratifiedPopulation& pop, const StratumCounts& draws);

struct Resampling {
    double population_total = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    int replicates = 0;
};

/// HT totals over `replicates` independent stratified samples.
Resampling ht_resampling(const StratifiedPopulation& pop, const StratumCounts& draws, int replicates,
                         std::uint64_t seed);

struct Stationarity {
    std::vector<double> empirical;  ///< frequency of patterns 00, 01, 10, 11
    std::vector<double> target;     ///< enumerated stationary distribution
    double total_variation = 0.0;
};

/// Six-unit toy with two missing x values. Coefficients are held fixed and
/// the constrained imputation step is iterated; the empirical pattern
/// frequencies are compared with proposal mass x margin density enumerated
/// over all four patterns.
Stationarity six_unit_stationarity(std::int64_t iterations, std::uint64_t seed, bool per_stratum = false);

/// Straight-line Rubin combination written from the formulas.
struct Rubin {
    double qbar, ubar, b, t;
};
Rubin rubin_reference(const std::vector<double>& q, const std::vector<double>& u);

}  // namespace anmi::oracle
