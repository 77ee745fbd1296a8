#include "anmi/mcmc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>
#include <sstream>

#include "anmi/csv.hpp"
#include "anmi/error.hpp"
#include "anmi/normal.hpp"

namespace anmi {

namespace {

constexpr std::array<double, 3> kDirichletPrior{1.0, 1.0, 1.0};

std::string normalize_method_token(std::string_view text) {
    std::string out;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::toupper(c)));
    }
    return out;
}

}  // namespace

std::string_view method_name(Method m) noexcept {
    switch (m) {
        case Method::MarWeight: return "MAR+Weight";
        case Method::AnWeight: return "AN+Weight";
        case Method::AnConstraint: return "AN+Constraint";
        case Method::AnConstraintWeight: return "AN+Constraint+Weight";
    }
    return "?";
}

std::string_view method_description(Method m) noexcept {
    switch (m) {
        case Method::MarWeight:
            return "MAR response model; stratum indicator in the x model; no auxiliary margin";
        case Method::AnWeight:
            return "additive nonignorable response model; stratum indicator in the x model; no auxiliary margin";
        case Method::AnConstraint:
            return "additive nonignorable response model; completed HT totals constrained to the auxiliary margin";
        case Method::AnConstraintWeight:
            return "AN+Constraint with a stratum indicator in the x model";
    }
    return "";
}

std::optional<Method> parse_method(std::string_view text) {
    const std::string token = normalize_method_token(text);
    for (Method m : kAllMethods) {
        if (token == normalize_method_token(method_name(m))) return m;
    }
    if (token == "ANC") return Method::AnConstraint;
    if (token == "ANCW") return Method::AnConstraintWeight;
    if (token == "MARW") return Method::MarWeight;
    if (token == "ANW") return Method::AnWeight;
    return std::nullopt;
}

std::int64_t ChainSettings::retained_count() const noexcept {
    if (thin <= 0 || iterations <= burn_in) return 0;
    return (iterations - burn_in) / thin;
}

void ChainSettings::validate() const {
    if (iterations <= 0) throw ParameterDomainError("iterations must be positive");
    if (burn_in < 0 || burn_in >= iterations) throw ParameterDomainError("burn-in must be in [0, iterations)");
    if (thin <= 0) throw ParameterDomainError("thin must be positive");
    if (retained_count() < 1) throw ParameterDomainError("settings retain no completed datasets");
    if (warning_window <= 0) throw ParameterDomainError("warning window must be positive");
}

double ChainState::completed_total() const noexcept {
    double total = 0.0;
    for (const auto& [s, t] : completed_totals) total += t;
    return total;
}

ImputationProblem::ImputationProblem(const SurveySample& sample) : sample_(&sample) {
    for (const auto& [s, n] : sample.stratum_draws) {
        strata_.push_back(s);
        observed_totals_[s] = 0.0;
    }
    for (std::size_t i = 0; i < sample.units.size(); ++i) {
        const auto& u = sample.units[i];
        if (!std::binary_search(strata_.begin(), strata_.end(), u.stratum)) {
            strata_.insert(std::upper_bound(strata_.begin(), strata_.end(), u.stratum), u.stratum);
        }
        if (u.missing()) {
            if (u.x) throw ParameterDomainError("unit " + std::to_string(i) + " has r = 1 but an observed x");
            missing_by_stratum_[u.stratum].push_back(missing_.size());
            missing_.push_back(i);
        } else {
            if (!u.x) throw CompletenessError("unit " + std::to_string(i) + " has r = 0 but no x");
            observed_totals_[u.stratum] += u.weight * *u.x;
        }
    }
}

std::size_t ImputationProblem::stratum_level(int stratum) const {
    auto it = std::lower_bound(strata_.begin(), strata_.end(), stratum);
    if (it == strata_.end() || *it != stratum) throw ArityError("unknown stratum " + std::to_string(stratum));
    return static_cast<std::size_t>(it - strata_.begin());
}

std::map<int, double> ImputationProblem::completed_totals(const std::vector<int>& imputations) const {
    auto totals = observed_totals_;
    for (std::size_t k = 0; k < missing_.size(); ++k) {
        const auto& u = sample_->units[missing_[k]];
        totals[u.stratum] += u.weight * imputations[k];
    }
    return totals;
}

SurveySample ImputationProblem::complete(const std::vector<int>& imputations) const {
    SurveySample out = *sample_;
    for (std::size_t k = 0; k < missing_.size(); ++k) out.units[missing_[k]].x = imputations[k];
    return out;
}

ProbitCovariates covariates_for(const ProbitCoefficients& coef, int y, std::optional<int> x,
                                std::size_t stratum_level) {
    ProbitCovariates cov;
    cov.y = y;
    if (coef.x_effect) cov.x = x;
    if (coef.has_stratum_terms()) cov.stratum_level = stratum_level;
    return cov;
}

double imputation_probability(int y, std::size_t stratum_level, const ProbitCoefficients& outcome,
                              const ProbitCoefficients& response) {
    const double eta = linear_predictor(outcome, covariates_for(outcome, y, std::nullopt, stratum_level));
    if (!response.x_effect) return normal_cdf(eta);
    // log g + log h(x=1) against log(1-g) + log h(x=0), for tail stability.
    const double h1 = log_normal_cdf(linear_predictor(response, covariates_for(response, y, 1, stratum_level)));
    const double h0 = log_normal_cdf(linear_predictor(response, covariates_for(response, y, 0, stratum_level)));
    const double one = log_normal_cdf(eta) + h1;
    const double zero = log_normal_cdf(-eta) + h0;
    // Pr(x=1) = 1 / (1 + exp(zero - one)).
    return 1.0 / (1.0 + std::exp(zero - one));
}

int impute_missing_x(int y, std::size_t stratum_level, const ProbitCoefficients& outcome,
                     const ProbitCoefficients& response, Rng& rng) {
    return rng.bernoulli(imputation_probability(y, stratum_level, outcome, response)) ? 1 : 0;
}

double constraint_acceptance_ratio(double candidate_total, double current_total, const MarginEntry& margin) {
    if (!(margin.variance > 0.0)) throw ParameterDomainError("margin variance must be positive");
    const double dc = current_total - margin.total;
    const double dn = candidate_total - margin.total;
    return std::exp((dc * dc - dn * dn) / (2.0 * margin.variance));
}

std::vector<bool> metropolis_imputation_step(ChainState& state, const ImputationProblem& problem,
                                             const AuxiliaryMargin* margin, Rng& rng) {
    const bool per_stratum = margin && margin->scope() == MarginScope::PerStratum;
    const std::size_t blocks = per_stratum ? margin->strata().size() : 1;
    const auto& missing = problem.missing_units();
    if (missing.empty()) return std::vector<bool>(blocks, true);
    if (state.imputations.size() != missing.size()) throw ArityError("imputation vector does not match the sample");

    const auto& units = problem.sample().units;
    const std::size_t levels = problem.strata().size();
    std::vector<double> prob(3 * levels);
    for (std::size_t level = 0; level < levels; ++level) {
        for (int y = 1; y <= 3; ++y) {
            prob[3 * level + static_cast<std::size_t>(y - 1)] =
                imputation_probability(y, level, state.outcome, state.response);
        }
    }
    auto propose = [&](std::size_t slot) {
        const auto& u = units[missing[slot]];
        return rng.bernoulli(prob[3 * problem.stratum_level(u.stratum) + static_cast<std::size_t>(u.y - 1)]) ? 1 : 0;
    };

    if (!per_stratum) {
        std::vector<int> candidate(missing.size());
        for (std::size_t k = 0; k < missing.size(); ++k) candidate[k] = propose(k);
        auto totals = problem.completed_totals(candidate);
        bool accept = true;
        if (margin) {
            double cand = 0.0;
            for (const auto& [s, t] : totals) cand += t;
            const double p = constraint_acceptance_ratio(cand, state.completed_total(), margin->overall_entry());
            accept = rng.uniform() <= p;
        }
        if (accept) {
            state.imputations = std::move(candidate);
            state.completed_totals = std::move(totals);
        }
        return {accept};
    }

    std::vector<bool> flags;
    flags.reserve(blocks);
    const auto& by_stratum = problem.missing_by_stratum();
    for (const auto& [s, entry] : margin->strata()) {
        auto it = by_stratum.find(s);
        if (it == by_stratum.end()) {
            flags.push_back(true);
            continue;
        }
        double cand = problem.observed_totals().at(s);
        std::vector<int> sub(it->second.size());
        for (std::size_t j = 0; j < it->second.size(); ++j) {
            const std::size_t slot = it->second[j];
            sub[j] = propose(slot);
            cand += units[missing[slot]].weight * sub[j];
        }
        const double p = constraint_acceptance_ratio(cand, state.completed_totals.at(s), entry);
        const bool accept = rng.uniform() <= p;
        if (accept) {
            for (std::size_t j = 0; j < it->second.size(); ++j) state.imputations[it->second[j]] = sub[j];
            state.completed_totals[s] = cand;
        }
        flags.push_back(accept);
    }
    return flags;
}

Chain::Chain(const SurveySample& sample, std::optional<AuxiliaryMargin> margin, ChainSettings settings)
    : sample_(sample), problem_(sample_), margin_(std::move(margin)), settings_(settings), rng_(settings.seed) {
    settings_.validate();
    const auto tr = traits(settings_.method);
    if (tr.uses_margin && !margin_) {
        throw ParameterDomainError(std::string(method_name(settings_.method)) + " needs an auxiliary margin");
    }
    if (!tr.uses_margin) margin_.reset();
    if (margin_) margin_->validate_against(sample_.stratum_sizes);

    const std::size_t levels = problem_.strata().size();
    const std::size_t stratum_terms = tr.outcome_has_stratum && levels > 1 ? levels - 1 : 0;
    state_.outcome = ProbitCoefficients::zeros(false, stratum_terms);
    state_.response = ProbitCoefficients::zeros(tr.response_has_x, 0);

    // Grouped designs: outcome cells indexed by (y, stratum level), response
    // cells by (y, x) for AN models or y alone for MAR.
    const std::size_t outcome_levels = stratum_terms > 0 ? levels : 1;
    outcome_cells_.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * outcome_levels),
                                                static_cast<Eigen::Index>(3 + stratum_terms));
    for (std::size_t level = 0; level < outcome_levels; ++level) {
        for (int y = 1; y <= 3; ++y) {
            const auto row = static_cast<Eigen::Index>(3 * level + static_cast<std::size_t>(y - 1));
            ProbitCovariates cov{y, std::nullopt, level};
            outcome_cells_.rows.row(row) = design_row(cov, false, stratum_terms);
        }
    }
    const std::size_t x_levels = tr.response_has_x ? 2 : 1;
    response_cells_.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * x_levels),
                                                 static_cast<Eigen::Index>(tr.response_has_x ? 4 : 3));
    for (std::size_t x = 0; x < x_levels; ++x) {
        for (int y = 1; y <= 3; ++y) {
            const auto row = static_cast<Eigen::Index>(3 * x + static_cast<std::size_t>(y - 1));
            ProbitCovariates cov{y, static_cast<int>(x), std::nullopt};
            response_cells_.rows.row(row) = design_row(cov, tr.response_has_x, 0);
        }
    }
    observed_outcome_ = {std::vector<std::int64_t>(3 * outcome_levels), std::vector<std::int64_t>(3 * outcome_levels)};
    observed_response_ = {std::vector<std::int64_t>(3 * x_levels), std::vector<std::int64_t>(3 * x_levels)};

    std::int64_t respondents = 0;
    std::int64_t respondent_ones = 0;
    for (const auto& u : sample_.units) {
        y_counts_[static_cast<std::size_t>(u.y - 1)] += 1.0;
        const std::size_t level = stratum_terms > 0 ? problem_.stratum_level(u.stratum) : 0;
        const std::size_t outcome_cell = 3 * level + static_cast<std::size_t>(u.y - 1);
        if (u.missing()) {
            missing_outcome_cell_.push_back(outcome_cell);
            missing_y_.push_back(static_cast<std::size_t>(u.y - 1));
            continue;
        }
        ++respondents;
        respondent_ones += *u.x;
        (*u.x ? observed_outcome_.ones : observed_outcome_.zeros)[outcome_cell] += 1;
        const std::size_t x_level = tr.response_has_x ? static_cast<std::size_t>(*u.x) : 0;
        observed_response_.zeros[3 * x_level + static_cast<std::size_t>(u.y - 1)] += 1;
    }

    const double start_p = respondents > 0 ? static_cast<double>(respondent_ones) / static_cast<double>(respondents)
                                           : 0.5;
    state_.imputations.resize(problem_.missing_units().size());
    for (auto& x : state_.imputations) x = rng_.bernoulli(start_p) ? 1 : 0;
    state_.completed_totals = problem_.completed_totals(state_.imputations);
}

void Chain::update_outcome() {
    outcome_cells_.ones = observed_outcome_.ones;
    outcome_cells_.zeros = observed_outcome_.zeros;
    for (std::size_t k = 0; k < state_.imputations.size(); ++k) {
        (state_.imputations[k] ? outcome_cells_.ones : outcome_cells_.zeros)[missing_outcome_cell_[k]] += 1;
    }
    state_.outcome = state_.outcome.with_values(
        update_probit_coefficients(outcome_cells_, state_.outcome.to_vector(), rng_));
}

void Chain::update_response() {
    const bool with_x = state_.response.x_effect.has_value();
    response_cells_.ones.assign(observed_response_.ones.size(), 0);
    response_cells_.zeros = observed_response_.zeros;
    for (std::size_t k = 0; k < state_.imputations.size(); ++k) {
        const std::size_t x_level = with_x ? static_cast<std::size_t>(state_.imputations[k]) : 0;
        response_cells_.ones[3 * x_level + missing_y_[k]] += 1;
    }
    state_.response = state_.response.with_values(
        update_probit_coefficients(response_cells_, state_.response.to_vector(), rng_));
}

std::vector<bool> Chain::step() {
    auto flags = metropolis_imputation_step(state_, problem_, margin_ ? &*margin_ : nullptr, rng_);
    state_.theta = update_theta(y_counts_, kDirichletPrior, rng_);
    update_outcome();
    update_response();
    ++iteration_;
    return flags;
}

namespace {

std::vector<int> block_strata(const std::optional<AuxiliaryMargin>& margin) {
    if (margin && margin->scope() == MarginScope::PerStratum) {
        std::vector<int> out;
        for (const auto& [s, e] : margin->strata()) out.push_back(s);
        return out;
    }
    return {0};
}

AuxiliaryMargin refreshed_margin(const AuxiliaryMargin& margin, const std::vector<std::map<int, double>>& variances) {
    std::map<int, double> mean;
    for (const auto& v : variances) {
        for (const auto& [s, value] : v) mean[s] += value / static_cast<double>(variances.size());
    }
    if (margin.scope() == MarginScope::Overall) {
        double total = 0.0;
        for (const auto& [s, v] : mean) total += v;
        return AuxiliaryMargin::overall(margin.overall_entry().total, total);
    }
    auto entries = margin.strata();
    for (auto& [s, e] : entries) e.variance = mean.at(s);
    return AuxiliaryMargin::per_stratum(std::move(entries));
}

}  // namespace

ChainResult run_chain(const SurveySample& sample, const std::optional<AuxiliaryMargin>& margin,
                      const ChainSettings& settings) {
    Chain chain(sample, margin, settings);
    const bool constrained = traits(settings.method).uses_margin;

    ChainResult result;
    result.trace.blocks = block_strata(chain.margin());
    result.trace.burn_in = settings.burn_in;
    result.trace.accepted.assign(result.trace.blocks.size(), {});
    for (auto& a : result.trace.accepted) a.reserve(static_cast<std::size_t>(settings.iterations));
    const auto& strata = chain.problem().strata();
    if (traits(settings.method).outcome_has_stratum) {
        result.stratum_terms.assign(strata.begin() + (strata.empty() ? 0 : 1), strata.end());
    }

    std::vector<std::map<int, double>> burn_in_variances;
    for (std::int64_t t = 1; t <= settings.iterations; ++t) {
        const auto flags = chain.step();
        for (std::size_t b = 0; b < flags.size(); ++b) result.trace.accepted[b].push_back(flags[b] ? 1 : 0);

        if (settings.refresh_margin_variance && constrained && t <= settings.burn_in) {
            if (t % settings.thin == 0) {
                burn_in_variances.push_back(
                    design_variances_by_stratum(chain.problem().complete(chain.state().imputations)));
            }
            if (t == settings.burn_in && !burn_in_variances.empty()) {
                chain.set_margin(refreshed_margin(*chain.margin(), burn_in_variances));
            }
        }

        if (t > settings.burn_in && (t - settings.burn_in) % settings.thin == 0) {
            const auto& s = chain.state();
            result.completed.push_back(chain.problem().complete(s.imputations));
            result.draws.push_back(ParameterDraw{t, s.theta, s.outcome, s.response, s.completed_totals, flags});
        }
    }
    result.margin_used = chain.margin();

    auto& trace = result.trace;
    const auto post = static_cast<std::size_t>(settings.burn_in);
    double accepted_all = 0.0;
    double count_all = 0.0;
    for (std::size_t b = 0; b < trace.blocks.size(); ++b) {
        const auto& a = trace.accepted[b];
        double accepted = 0.0;
        for (std::size_t t = post; t < a.size(); ++t) accepted += a[t];
        const double n = static_cast<double>(a.size() - post);
        accepted_all += accepted;
        count_all += n;
        if (trace.blocks[b] != 0) trace.stratum_ratios[trace.blocks[b]] = accepted / n;

        if (!constrained || chain.problem().missing_units().empty()) continue;
        const auto window = static_cast<std::size_t>(settings.warning_window);
        const std::size_t span = a.size() - post;
        const std::size_t step = std::min(window, span);
        for (std::size_t start = post; start + step <= a.size(); start += step) {
            double acc = 0.0;
            for (std::size_t t = start; t < start + step; ++t) acc += a[t];
            const double ratio = acc / static_cast<double>(step);
            if (ratio < settings.warning_threshold) {
                std::ostringstream msg;
                msg << "low acceptance " << ratio << " in iterations " << start + 1 << "-" << start + step;
                if (trace.blocks[b] != 0) msg << " (stratum " << trace.blocks[b] << ")";
                msg << "; consider inflating V_X";
                trace.warnings.push_back(msg.str());
            }
        }
    }
    trace.overall_ratio = count_all > 0 ? accepted_all / count_all : 1.0;
    return result;
}

void write_trace_csv(std::ostream& out, const ChainResult& result) {
    if (result.draws.empty()) {
        out << "iteration\n";
        return;
    }
    const auto& first = result.draws.front();
    const auto outcome_names = term_names(false, result.stratum_terms);
    const auto response_names = term_names(first.response.x_effect.has_value(), {});

    csv::Row header{"iteration", "theta1", "theta2", "theta3"};
    for (const auto& n : outcome_names) header.push_back("alpha_" + n);
    for (const auto& n : response_names) header.push_back("gamma_" + n);
    for (const auto& [s, t] : first.completed_totals) header.push_back("total_s" + std::to_string(s));
    header.emplace_back("total");
    for (int b : result.trace.blocks) header.push_back(b == 0 ? "accepted" : "accepted_s" + std::to_string(b));
    csv::write_row(out, header);

    for (const auto& d : result.draws) {
        csv::Row row{std::to_string(d.iteration)};
        for (double th : d.theta) row.push_back(csv::format_double(th));
        const auto a = d.outcome.to_vector();
        for (Eigen::Index k = 0; k < a.size(); ++k) row.push_back(csv::format_double(a[k]));
        const auto g = d.response.to_vector();
        for (Eigen::Index k = 0; k < g.size(); ++k) row.push_back(csv::format_double(g[k]));
        double total = 0.0;
        for (const auto& [s, t] : d.completed_totals) {
            row.push_back(csv::format_double(t));
            total += t;
        }
        row.push_back(csv::format_double(total));
        for (bool f : d.accepted) row.emplace_back(f ? "1" : "0");
        csv::write_row(out, row);
    }
}

}  // namespace anmi
