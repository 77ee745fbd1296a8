#include "anmi/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "anmi/error.hpp"
#include "anmi/models.hpp"
#include "anmi/normal.hpp"

namespace anmi {

namespace {

constexpr double kScoreTolerance = 1e-8;
constexpr int kMaxIterations = 100;
constexpr int kMaxHalvings = 30;
constexpr double kSeparationNorm = 50.0;
// |eta| beyond this means a fitted probability within ~1e-15 of 0 or 1.
constexpr double kExtremePredictor = 8.0;
// For a pattern with only one observed response: Phi(-5) ~ 3e-7.
constexpr double kBoundaryPredictor = 5.0;

struct PointDerivatives {
    double log_lik;
    double first;   // d log-lik / d eta
    double second;  // d^2 log-lik / d eta^2
};

PointDerivatives probit_point(double eta, int y) {
    if (y == 1) {
        const double lambda = inverse_mills_ratio(eta);
        return {log_normal_cdf(eta), lambda, -lambda * (lambda + eta)};
    }
    const double lambda = inverse_mills_ratio(-eta);
    return {log_normal_cdf(-eta), -lambda, -lambda * (lambda - eta)};
}

struct Evaluation {
    double log_lik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd information;
};

Evaluation evaluate(const Eigen::MatrixXd& X, std::span<const int> y, std::span<const double> w,
                    const Eigen::VectorXd& beta) {
    const Eigen::Index p = X.cols();
    Evaluation e{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
    const Eigen::VectorXd eta = X * beta;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const auto d = probit_point(eta[i], y[iu]);
        e.log_lik += w[iu] * d.log_lik;
        e.score.noalias() += (w[iu] * d.first) * X.row(i).transpose();
        e.information.noalias() -= (w[iu] * d.second) * X.row(i).transpose() * X.row(i);
    }
    return e;
}

void check_inputs(const Eigen::MatrixXd& X, std::span<const int> y, std::span<const double> w) {
    if (static_cast<std::size_t>(X.rows()) != y.size() || y.size() != w.size()) {
        throw ArityError("design, responses and weights differ in length");
    }
    if (X.rows() == 0) throw SingularDesignError("probit fit needs at least one observation");
    bool any_one = false;
    bool any_zero = false;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw ParameterDomainError("probit responses must be 0 or 1");
        if (!(w[i] > 0.0) || !std::isfinite(w[i])) throw ParameterDomainError("weights must be positive and finite");
        (y[i] ? any_one : any_zero) = true;
    }
    if (!any_one || !any_zero) throw SeparationError("all responses are identical; the probit MLE does not exist");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < X.cols()) throw SingularDesignError("probit design matrix is not of full column rank");
}

}  // namespace

double FitResult::coefficient(const std::string& term) const {
    auto it = std::find(terms.begin(), terms.end(), term);
    if (it == terms.end()) throw ArityError("no term named " + term);
    return coefficients[it - terms.begin()];
}

double FitResult::standard_error(const std::string& term) const {
    auto it = std::find(terms.begin(), terms.end(), term);
    if (it == terms.end()) throw ArityError("no term named " + term);
    return standard_errors[it - terms.begin()];
}

double probit_log_likelihood(const Eigen::MatrixXd& design, std::span<const int> responses,
                             std::span<const double> weights, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = design * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        const auto iu = static_cast<std::size_t>(i);
        ll += weights[iu] * (responses[iu] ? log_normal_cdf(eta[i]) : log_normal_cdf(-eta[i]));
    }
    return ll;
}

ProbitMle fit_probit_mle(const Eigen::MatrixXd& design, std::span<const int> responses,
                         std::span<const double> weights) {
    check_inputs(design, responses, weights);

    // The likelihood only sees distinct (row, response) pairs, so Newton runs
    // on the collapsed data with summed weights.
    const Eigen::Index p = design.cols();
    std::map<std::pair<std::vector<double>, int>, std::size_t> index;
    std::vector<std::size_t> group_of(responses.size());
    std::vector<std::vector<double>> rows;
    std::vector<int> group_y;
    std::vector<double> group_w;
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        const auto iu = static_cast<std::size_t>(i);
        std::vector<double> key(static_cast<std::size_t>(p));
        for (Eigen::Index j = 0; j < p; ++j) key[static_cast<std::size_t>(j)] = design(i, j);
        auto [it, inserted] = index.emplace(std::make_pair(key, responses[iu]), rows.size());
        if (inserted) {
            rows.push_back(std::move(key));
            group_y.push_back(responses[iu]);
            group_w.push_back(0.0);
        }
        group_w[it->second] += weights[iu];
        group_of[iu] = it->second;
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t g = 0; g < rows.size(); ++g) {
        for (Eigen::Index j = 0; j < p; ++j) X(static_cast<Eigen::Index>(g), j) = rows[g][static_cast<std::size_t>(j)];
    }

    ProbitMle out;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Evaluation current = evaluate(X, group_y, group_w, beta);

    for (;;) {
        out.max_abs_score = current.score.cwiseAbs().maxCoeff();
        if (out.max_abs_score < kScoreTolerance) {
            out.converged = true;
            break;
        }
        if (out.iterations >= kMaxIterations) break;
        ++out.iterations;

        const Eigen::VectorXd full_step = current.information.ldlt().solve(current.score);
        double scale = 1.0;
        Eigen::VectorXd candidate = beta + full_step;
        Evaluation next = evaluate(X, group_y, group_w, candidate);
        // Near the optimum the gain drops below the rounding of the sum, so
        // compare with a relative slack of a few ulps of the total.
        const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(current.log_lik);
        for (int h = 0; h < kMaxHalvings && !(next.log_lik >= current.log_lik - slack); ++h) {
            scale *= 0.5;
            candidate = beta + scale * full_step;
            next = evaluate(X, group_y, group_w, candidate);
        }
        beta = std::move(candidate);
        current = std::move(next);
        if (beta.norm() > kSeparationNorm) {
            throw SeparationError("probit coefficients diverged (norm " + std::to_string(beta.norm()) +
                                  "); the data are separated");
        }
    }

    const Eigen::VectorXd eta = X * beta;
    if (out.converged && eta.cwiseAbs().maxCoeff() > kExtremePredictor) {
        throw SeparationError("fitted probabilities are numerically 0 or 1; the data are quasi-separated");
    }
    // Quasi-separation: a covariate pattern whose units all share one response
    // and whose fitted probability has run off to the boundary. Newton meets
    // the score tolerance there only because the score decays faster than
    // the coefficient diverges.
    if (out.converged) {
        std::map<std::vector<double>, int> patterns;  // bit 1: has y=1, bit 2: has y=0
        for (std::size_t g = 0; g < rows.size(); ++g) patterns[rows[g]] |= group_y[g] ? 1 : 2;
        for (std::size_t g = 0; g < rows.size(); ++g) {
            if (patterns[rows[g]] != 3 && std::abs(eta[static_cast<Eigen::Index>(g)]) > kBoundaryPredictor) {
                throw SeparationError("a covariate pattern is fitted at probability 0 or 1; the data are quasi-separated");
            }
        }
    }
    out.coefficients = beta;
    out.information = current.information;
    std::vector<double> first(rows.size());
    for (std::size_t g = 0; g < rows.size(); ++g) {
        first[g] = probit_point(eta[static_cast<Eigen::Index>(g)], group_y[g]).first;
    }
    out.scores.resize(design.rows(), p);
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        out.scores.row(i) = first[group_of[static_cast<std::size_t>(i)]] * design.row(i);
    }
    return out;
}

namespace {

std::vector<int> non_reference_strata(const SurveySample& sample) {
    std::vector<int> strata;
    for (const auto& u : sample.units) strata.push_back(u.stratum);
    std::sort(strata.begin(), strata.end());
    strata.erase(std::unique(strata.begin(), strata.end()), strata.end());
    if (!strata.empty()) strata.erase(strata.begin());
    return strata;
}

Eigen::VectorXd sqrt_diagonal(const Eigen::MatrixXd& v) {
    Eigen::VectorXd out(v.rows());
    for (Eigen::Index j = 0; j < v.rows(); ++j) out[j] = std::sqrt(std::max(0.0, v(j, j)));
    return out;
}

}  // namespace

FitResult weighted_probit_fit(const SurveySample& completed, OutcomeFormula formula, VarianceConvention convention) {
    const auto extra = formula.include_stratum ? non_reference_strata(completed) : std::vector<int>{};
    const auto n = static_cast<Eigen::Index>(completed.units.size());
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(3 + extra.size()));
    std::vector<int> y(completed.units.size());
    std::vector<double> w(completed.units.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& u = completed.units[static_cast<std::size_t>(i)];
        if (!u.x) throw CompletenessError("unit " + std::to_string(i) + " has missing x");
        std::size_t level = 0;
        if (auto it = std::find(extra.begin(), extra.end(), u.stratum); it != extra.end()) {
            level = static_cast<std::size_t>(it - extra.begin()) + 1;
        }
        X.row(i) = design_row(ProbitCovariates{u.y, std::nullopt, level}, false, extra.size());
        y[static_cast<std::size_t>(i)] = *u.x;
        w[static_cast<std::size_t>(i)] = u.weight;
    }
    const auto mle = fit_probit_mle(X, y, w);

    // Linearization: sandwich of the inverse information around the
    // between-unit variance of weighted scores, centred within strata.
    std::map<int, std::vector<Eigen::Index>> members;
    for (Eigen::Index i = 0; i < n; ++i) members[completed.units[static_cast<std::size_t>(i)].stratum].push_back(i);
    const Eigen::Index p = X.cols();
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
    for (const auto& [s, idx] : members) {
        const auto ns = static_cast<double>(idx.size());
        if (idx.size() < 2) throw DesignError("stratum " + std::to_string(s) + " needs n_s >= 2 for a variance");
        double factor = ns / (ns - 1.0);
        if (convention == VarianceConvention::WithoutReplacement) {
            auto it = completed.stratum_sizes.find(s);
            if (it == completed.stratum_sizes.end()) throw DesignError("unknown N_s for stratum " + std::to_string(s));
            factor *= 1.0 - ns / static_cast<double>(it->second);
        }
        Eigen::MatrixXd u(static_cast<Eigen::Index>(idx.size()), p);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            u.row(static_cast<Eigen::Index>(k)) = w[static_cast<std::size_t>(idx[k])] * mle.scores.row(idx[k]);
        }
        const Eigen::RowVectorXd mean = u.colwise().mean();
        u.rowwise() -= mean;
        meat.noalias() += factor * u.transpose() * u;
    }
    const Eigen::MatrixXd bread = mle.information.inverse();
    const Eigen::MatrixXd cov = bread * meat * bread;

    FitResult fit;
    fit.terms = term_names(false, extra);
    fit.coefficients = mle.coefficients;
    fit.standard_errors = sqrt_diagonal(cov);
    fit.converged = mle.converged;
    fit.iterations_used = mle.iterations;
    fit.max_abs_score = mle.max_abs_score;
    return fit;
}

FitResult unweighted_probit_fit(const SurveySample& completed, ResponseFormula formula) {
    const auto n = static_cast<Eigen::Index>(completed.units.size());
    Eigen::MatrixXd X(n, formula.include_x ? 4 : 3);
    std::vector<int> r(completed.units.size());
    const std::vector<double> w(completed.units.size(), 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& u = completed.units[static_cast<std::size_t>(i)];
        if (formula.include_x && !u.x) throw CompletenessError("unit " + std::to_string(i) + " has missing x");
        X.row(i) = design_row(ProbitCovariates{u.y, u.x, std::nullopt}, formula.include_x, 0);
        r[static_cast<std::size_t>(i)] = u.r;
    }
    const auto mle = fit_probit_mle(X, r, w);

    FitResult fit;
    fit.terms = term_names(formula.include_x, {});
    fit.coefficients = mle.coefficients;
    fit.standard_errors = sqrt_diagonal(mle.information.inverse());
    fit.converged = mle.converged;
    fit.iterations_used = mle.iterations;
    fit.max_abs_score = mle.max_abs_score;
    return fit;
}

TotalEstimate ht_with_se(const SurveySample& completed, VarianceConvention convention) {
    const double total = ht_total(completed);
    double variance = 0.0;
    for (const auto& [s, v] :
         design_variances_by_stratum(completed, convention == VarianceConvention::WithoutReplacement)) {
        variance += v;
    }
    return {total, std::sqrt(variance)};
}

double MIEstimate::se() const { return std::sqrt(variance); }

MIEstimate rubin_combine(std::span<const double> q_values, std::span<const double> u_values) {
    if (q_values.size() != u_values.size()) throw ArityError("q and u must have the same length");
    const std::size_t L = q_values.size();
    if (L < 2) throw ParameterDomainError("combining rules need at least two completed datasets");
    MIEstimate est;
    est.L = L;
    const double Ld = static_cast<double>(L);
    // Averaging offsets from the first value keeps identical estimates exact.
    const double origin = q_values[0];
    double offset = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        if (!(u_values[l] >= 0.0)) throw ParameterDomainError("within-imputation variances must be nonnegative");
        offset += q_values[l] - origin;
        est.within += u_values[l];
    }
    est.point = origin + offset / Ld;
    est.within /= Ld;
    for (double q : q_values) est.between += (q - est.point) * (q - est.point);
    est.between /= Ld - 1.0;
    est.variance = (1.0 + 1.0 / Ld) * est.between + est.within;
    return est;
}

RunAggregate aggregate_runs(std::span<const MIEstimate> estimates) {
    if (estimates.empty()) throw ParameterDomainError("aggregate_runs needs at least one run");
    RunAggregate agg;
    double variance = 0.0;
    for (const auto& e : estimates) {
        agg.mean += e.point;
        variance += e.variance;
    }
    const double M = static_cast<double>(estimates.size());
    agg.mean /= M;
    agg.pooled_se = std::sqrt(variance / M);
    return agg;
}

std::string to_json(const FitResult& fit) {
    nlohmann::json j;
    j["coefficients"] = nlohmann::json::object();
    j["standard_errors"] = nlohmann::json::object();
    for (std::size_t k = 0; k < fit.terms.size(); ++k) {
        j["coefficients"][fit.terms[k]] = fit.coefficients[static_cast<Eigen::Index>(k)];
        j["standard_errors"][fit.terms[k]] = fit.standard_errors[static_cast<Eigen::Index>(k)];
    }
    j["converged"] = fit.converged;
    j["iterations_used"] = fit.iterations_used;
    return j.dump();
}

std::string to_json(const MIEstimate& e) {
    nlohmann::json j{{"point", e.point}, {"variance", e.variance}, {"within", e.within},
                     {"between", e.between}, {"L", e.L}, {"se", e.se()}};
    return j.dump();
}

}  // namespace anmi
