#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anmi/survey.hpp"

namespace anmi {

/// Variance convention for design-based standard errors.
enum class VarianceConvention {
    WithoutReplacement,  ///< stratified SRSWOR with finite population correction
    WithReplacement,     ///< common with-replacement approximation, no fpc
};

struct FitResult {
    std::vector<std::string> terms;
    Eigen::VectorXd coefficients;
    Eigen::VectorXd standard_errors;
    bool converged = false;
    int iterations_used = 0;
    /// Max absolute (weighted) score component at the returned coefficients.
    double max_abs_score = 0.0;

    [[nodiscard]] double coefficient(const std::string& term) const;
    [[nodiscard]] double standard_error(const std::string& term) const;
};

/// Newton solver for probit likelihoods sum_i w_i log Pr(y_i | x_i' beta).
struct ProbitMle {
    Eigen::VectorXd coefficients;
    /// Negative Hessian of the weighted log-likelihood at the solution.
    Eigen::MatrixXd information;
    /// Per-observation unweighted score vectors (rows).
    Eigen::MatrixXd scores;
    bool converged = false;
    int iterations = 0;
    double max_abs_score = 0.0;
};

/// Damped Newton: converged when the max absolute weighted score < 1e-8;
/// at most 100 iterations, each step halved up to 30 times until the
/// log-likelihood does not decrease. Throws SeparationError when the
/// coefficient norm exceeds 50.
ProbitMle fit_probit_mle(const Eigen::MatrixXd& design, std::span<const int> responses,
                         std::span<const double> weights);

/// Weighted log-likelihood used by the solver (exposed for testing).
double probit_log_likelihood(const Eigen::MatrixXd& design, std::span<const int> responses,
                             std::span<const double> weights, const Eigen::VectorXd& beta);

struct OutcomeFormula {
    bool include_stratum = false;
};

/// Survey-weighted pseudo-ML probit of x on y indicators (plus stratum
/// indicators when requested), with Taylor-linearization standard errors.
FitResult weighted_probit_fit(const SurveySample& completed, OutcomeFormula formula = {},
                              VarianceConvention convention = VarianceConvention::WithoutReplacement);

struct ResponseFormula {
    bool include_x = true;
};

/// Unweighted ML probit of r on y indicators (plus x); SEs from the inverse
/// observed information.
FitResult unweighted_probit_fit(const SurveySample& completed, ResponseFormula formula = {});

struct TotalEstimate {
    double total = 0.0;
    double se = 0.0;
    [[nodiscard]] double variance() const noexcept { return se * se; }
};

/// HT total with its stratified design-based standard error. Throws
/// DesignError when any stratum has n_s < 2.
TotalEstimate ht_with_se(const SurveySample& completed,
                         VarianceConvention convention = VarianceConvention::WithoutReplacement);

struct MIEstimate {
    double point = 0.0;     ///< q-bar
    double variance = 0.0;  ///< T = (1 + 1/L) b + u-bar
    double within = 0.0;    ///< u-bar
    double between = 0.0;   ///< b
    std::size_t L = 0;

    [[nodiscard]] double se() const;
};

/// Rubin's combining rules. Throws ParameterDomainError for L < 2 or
/// non-positive within-imputation variances.
MIEstimate rubin_combine(std::span<const double> q_values, std::span<const double> u_values);

struct RunAggregate {
    double mean = 0.0;
    double pooled_se = 0.0;
};

/// Average point estimate and sqrt of the average total variance over runs.
RunAggregate aggregate_runs(std::span<const MIEstimate> estimates);

/// JSON records with stable field names.
std::string to_json(const FitResult& fit);
std::string to_json(const MIEstimate& estimate);

}  // namespace anmi
