#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace anmi {

/// Probit coefficients with category 1 of y (and the first stratum) as the
/// omitted reference level. Terms are laid out as
/// [intercept, y=2, y=3, x?, stratum effects...].
struct ProbitCoefficients {
    double intercept = 0.0;
    std::array<double, 2> y_effects{};   ///< effects of y = 2 and y = 3
    std::optional<double> x_effect;      ///< present only in AN response models
    std::vector<double> stratum_effects; ///< one per non-reference stratum level; empty if unused

    /// Zero coefficients with the given terms switched on.
    static ProbitCoefficients zeros(bool with_x, std::size_t stratum_terms);

    [[nodiscard]] std::size_t term_count() const noexcept {
        return 3 + (x_effect ? 1 : 0) + stratum_effects.size();
    }
    [[nodiscard]] bool has_stratum_terms() const noexcept { return !stratum_effects.empty(); }

    [[nodiscard]] Eigen::VectorXd to_vector() const;
    /// Rebuild from a vector using this record's layout.
    [[nodiscard]] ProbitCoefficients with_values(const Eigen::VectorXd& values) const;
};

/// Covariates for one evaluation. `stratum_level` is 0 for the reference
/// stratum and k for the k-th non-reference level.
struct ProbitCovariates {
    int y = 1;
    std::optional<int> x;
    std::optional<std::size_t> stratum_level;
};

/// Linear predictor; throws ArityError unless the covariates match the
/// record's terms exactly.
double linear_predictor(const ProbitCoefficients& coef, const ProbitCovariates& cov);

/// Phi(linear predictor).
double probit_prob(const ProbitCoefficients& coef, const ProbitCovariates& cov);

/// Design row matching ProbitCoefficients' layout.
Eigen::RowVectorXd design_row(const ProbitCovariates& cov, bool with_x, std::size_t stratum_terms);

/// Term names matching the layout, e.g. {"intercept","y2","y3","x","stratum2"}.
std::vector<std::string> term_names(bool with_x, const std::vector<int>& non_reference_strata);

/// Pattern-mixture parameters for binary x, binary y, response indicator r.
struct PatternMixtureTable {
    /// theta[y][r] = Pr(x = 1 | y, r)
    std::array<std::array<double, 2>, 2> theta{};
    /// pi[r] = Pr(y = 1 | r)
    std::array<double, 2> pi{};
    /// q = Pr(r = 1)
    double q = 0.0;
};

/// Residual of the margin-implied linear constraint:
/// [Pr(x=1) - Pr(x=1, r=0)] - q [theta01 (1 - pi1) + theta11 pi1].
double margin_linear_constraint(double margin_prob, const PatternMixtureTable& table, double observed_joint);

/// Common nonrespondent value theta01 = theta11 implied by the margin when y
/// and x are independent among nonrespondents.
/// Throws ParameterDomainError for q = 0 and InfeasibleMarginError when the
/// result leaves [0, 1].
double conditional_independence_theta(double margin_prob, double q, double theta00, double theta10, double pi0);

}  // namespace anmi
