#include "anmi/models.hpp"

#include <algorithm>
#include <cmath>

#include "anmi/error.hpp"
#include "anmi/normal.hpp"

namespace anmi {

ProbitCoefficients ProbitCoefficients::zeros(bool with_x, std::size_t stratum_terms) {
    ProbitCoefficients c;
    if (with_x) c.x_effect = 0.0;
    c.stratum_effects.assign(stratum_terms, 0.0);
    return c;
}

Eigen::VectorXd ProbitCoefficients::to_vector() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(term_count()));
    Eigen::Index k = 0;
    v[k++] = intercept;
    v[k++] = y_effects[0];
    v[k++] = y_effects[1];
    if (x_effect) v[k++] = *x_effect;
    for (double s : stratum_effects) v[k++] = s;
    return v;
}

ProbitCoefficients ProbitCoefficients::with_values(const Eigen::VectorXd& values) const {
    if (static_cast<std::size_t>(values.size()) != term_count()) {
        throw ArityError("coefficient vector has " + std::to_string(values.size()) + " entries, expected " +
                         std::to_string(term_count()));
    }
    ProbitCoefficients c = *this;
    Eigen::Index k = 0;
    c.intercept = values[k++];
    c.y_effects[0] = values[k++];
    c.y_effects[1] = values[k++];
    if (c.x_effect) c.x_effect = values[k++];
    for (double& s : c.stratum_effects) s = values[k++];
    return c;
}

double linear_predictor(const ProbitCoefficients& coef, const ProbitCovariates& cov) {
    if (cov.y < 1 || cov.y > 3) throw ArityError("y must be 1, 2 or 3");
    if (coef.x_effect.has_value() != cov.x.has_value()) {
        throw ArityError(coef.x_effect ? "model has an x term but no x was supplied"
                                       : "x supplied to a model without an x term");
    }
    if (coef.has_stratum_terms() != cov.stratum_level.has_value()) {
        throw ArityError(coef.has_stratum_terms() ? "model has stratum terms but no stratum was supplied"
                                                  : "stratum supplied to a model without stratum terms");
    }
    double eta = coef.intercept;
    if (cov.y >= 2) eta += coef.y_effects[static_cast<std::size_t>(cov.y - 2)];
    if (cov.x) eta += *coef.x_effect * *cov.x;
    if (cov.stratum_level && *cov.stratum_level > 0) {
        if (*cov.stratum_level > coef.stratum_effects.size()) throw ArityError("stratum level out of range");
        eta += coef.stratum_effects[*cov.stratum_level - 1];
    }
    return eta;
}

double probit_prob(const ProbitCoefficients& coef, const ProbitCovariates& cov) {
    return normal_cdf(linear_predictor(coef, cov));
}

Eigen::RowVectorXd design_row(const ProbitCovariates& cov, bool with_x, std::size_t stratum_terms) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(3 + (with_x ? 1 : 0) + stratum_terms));
    row[0] = 1.0;
    if (cov.y == 2) row[1] = 1.0;
    if (cov.y == 3) row[2] = 1.0;
    Eigen::Index k = 3;
    if (with_x) row[k++] = cov.x.value_or(0);
    const std::size_t level = cov.stratum_level.value_or(0);
    if (level > 0 && level <= stratum_terms) row[k + static_cast<Eigen::Index>(level) - 1] = 1.0;
    return row;
}

std::vector<std::string> term_names(bool with_x, const std::vector<int>& non_reference_strata) {
    std::vector<std::string> names{"intercept", "y2", "y3"};
    if (with_x) names.emplace_back("x");
    for (int s : non_reference_strata) names.push_back("stratum" + std::to_string(s));
    return names;
}

double margin_linear_constraint(double margin_prob, const PatternMixtureTable& table, double observed_joint) {
    const double pi1 = table.pi[1];
    const double nonrespondent = table.theta[0][1] * (1.0 - pi1) + table.theta[1][1] * pi1;
    return (margin_prob - observed_joint) - table.q * nonrespondent;
}

double conditional_independence_theta(double margin_prob, double q, double theta00, double theta10, double pi0) {
    if (!(q > 0.0)) throw ParameterDomainError("conditional-independence theta needs q > 0");
    const double respondent = theta00 * (1.0 - pi0) + theta10 * pi0;
    const double value = (margin_prob - (1.0 - q) * respondent) / q;
    // A few ulps of slack so exact boundary cases are not rejected.
    constexpr double slack = 1e-12;
    if (value < -slack || value > 1.0 + slack) {
        throw InfeasibleMarginError("margin implies nonrespondent Pr(x=1) = " + std::to_string(value) +
                                    ", outside [0,1]");
    }
    return std::clamp(value, 0.0, 1.0);
}

}  // namespace anmi
