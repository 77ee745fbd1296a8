#include "anmi/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "anmi/error.hpp"
#include "anmi/normal.hpp"

namespace anmi {

namespace {

constexpr double kTailCut = 3.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Robert (1995): exponential proposal with rate (a + sqrt(a^2 + 4)) / 2.
double optimal_rate(double a) { return 0.5 * (a + std::sqrt(a * a + 4.0)); }

double tail_rejection(double a, double b, double rate, Rng& rng) {
    for (;;) {
        const double z = a - std::log(rng.uniform()) / rate;
        if (z >= b) continue;
        const double d = z - rate;
        if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
    }
}

}  // namespace

TruncatedNormal::TruncatedNormal(double mean, double lower, double upper)
    : mean_(mean), a_(lower - mean), b_(upper - mean) {
    if (!(lower < upper) || std::isnan(mean)) {
        throw ParameterDomainError("truncated normal needs lower < upper (got " + std::to_string(lower) + ", " +
                                   std::to_string(upper) + ")");
    }
    if (a_ > kTailCut && (b_ == kInf || normal_cdf(-a_) <= 0.0)) {
        kind_ = Kind::UpperTailRejection;
        rate_ = optimal_rate(a_);
    } else if (b_ < -kTailCut && (a_ == -kInf || normal_cdf(b_) <= 0.0)) {
        kind_ = Kind::LowerTailRejection;
        rate_ = optimal_rate(-b_);
    } else if (a_ >= 0.0) {
        // Work with survival probabilities so upper regions keep precision.
        kind_ = Kind::InverseUpperTail;
        p_lo_ = normal_cdf(-b_);
        p_hi_ = normal_cdf(-a_);
    } else {
        kind_ = Kind::Inverse;
        p_lo_ = normal_cdf(a_);
        p_hi_ = normal_cdf(b_);
    }
}

double TruncatedNormal::operator()(Rng& rng) const {
    switch (kind_) {
        case Kind::UpperTailRejection:
            return mean_ + tail_rejection(a_, b_, rate_, rng);
        case Kind::LowerTailRejection:
            return mean_ - tail_rejection(-b_, -a_, rate_, rng);
        case Kind::InverseUpperTail: {
            const double u = p_lo_ + rng.uniform() * (p_hi_ - p_lo_);
            const double z = -normal_quantile(u);
            return mean_ + std::clamp(z, a_, b_);
        }
        case Kind::Inverse:
        default: {
            const double u = p_lo_ + rng.uniform() * (p_hi_ - p_lo_);
            const double z = normal_quantile(u);
            return mean_ + std::clamp(z, a_, b_);
        }
    }
}

double sample_truncated_normal(double mean, double lower, double upper, Rng& rng) {
    return TruncatedNormal(mean, lower, upper)(rng);
}

std::array<double, 3> update_theta(const std::array<double, 3>& counts, const std::array<double, 3>& prior, Rng& rng) {
    std::array<double, 3> draw{};
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (counts[k] < 0.0) throw ParameterDomainError("category counts must be nonnegative");
        if (!(prior[k] > 0.0)) throw ParameterDomainError("Dirichlet prior parameters must be positive");
        draw[k] = rng.gamma(prior[k] + counts[k]);
        sum += draw[k];
    }
    for (double& d : draw) d /= sum;
    return draw;
}

ProbitCells ProbitCells::group(std::span<const int> responses, const Eigen::MatrixXd& design) {
    if (static_cast<Eigen::Index>(responses.size()) != design.rows()) {
        throw ArityError("response count does not match design rows");
    }
    std::map<std::vector<double>, std::size_t> index;
    std::vector<std::vector<double>> unique;
    ProbitCells cells;
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        std::vector<double> key(static_cast<std::size_t>(design.cols()));
        for (Eigen::Index j = 0; j < design.cols(); ++j) key[static_cast<std::size_t>(j)] = design(i, j);
        auto [it, inserted] = index.emplace(key, unique.size());
        if (inserted) {
            unique.push_back(key);
            cells.ones.push_back(0);
            cells.zeros.push_back(0);
        }
        const int r = responses[static_cast<std::size_t>(i)];
        if (r != 0 && r != 1) throw ParameterDomainError("probit responses must be 0 or 1");
        (r == 1 ? cells.ones : cells.zeros)[it->second] += 1;
    }
    cells.rows.resize(static_cast<Eigen::Index>(unique.size()), design.cols());
    for (std::size_t k = 0; k < unique.size(); ++k) {
        for (Eigen::Index j = 0; j < design.cols(); ++j) {
            cells.rows(static_cast<Eigen::Index>(k), j) = unique[k][static_cast<std::size_t>(j)];
        }
    }
    return cells;
}

std::int64_t ProbitCells::observations() const noexcept {
    std::int64_t n = 0;
    for (std::size_t k = 0; k < ones.size(); ++k) n += ones[k] + zeros[k];
    return n;
}

namespace {

Eigen::VectorXd conjugate_draw(const Eigen::MatrixXd& gram, const Eigen::VectorXd& cross, Rng& rng) {
    const Eigen::Index p = gram.rows();
    const Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(p, p) + gram;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    const Eigen::VectorXd mean = llt.solve(cross);
    Eigen::VectorXd eps(p);
    for (Eigen::Index j = 0; j < p; ++j) eps[j] = rng.normal();
    // precision = L L'; L' v = eps gives v ~ N(0, precision^-1).
    return mean + llt.matrixU().solve(eps);
}

void require_full_rank(const Eigen::MatrixXd& gram) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const auto& values = eig.eigenvalues();
    const double largest = std::max(1.0, values.maxCoeff());
    if (values.minCoeff() <= 1e-10 * largest) {
        throw SingularDesignError("probit design matrix is not of full column rank");
    }
}

}  // namespace

Eigen::VectorXd update_probit_coefficients(const ProbitCells& cells, const Eigen::VectorXd& current, Rng& rng) {
    const Eigen::Index p = cells.rows.cols();
    if (current.size() != p) throw ArityError("current coefficients do not match the design");

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd cross = Eigen::VectorXd::Zero(p);
    if (cells.observations() == 0) return conjugate_draw(gram, cross, rng);

    for (Eigen::Index k = 0; k < cells.rows.rows(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const std::int64_t count = cells.ones[ku] + cells.zeros[ku];
        if (count == 0) continue;
        const Eigen::VectorXd row = cells.rows.row(k).transpose();
        gram.noalias() += static_cast<double>(count) * row * row.transpose();

        const double mean = row.dot(current);
        double latent_sum = 0.0;
        if (cells.ones[ku] > 0) {
            const TruncatedNormal positive(mean, 0.0, kInf);
            for (std::int64_t i = 0; i < cells.ones[ku]; ++i) latent_sum += positive(rng);
        }
        if (cells.zeros[ku] > 0) {
            const TruncatedNormal negative(mean, -kInf, 0.0);
            for (std::int64_t i = 0; i < cells.zeros[ku]; ++i) latent_sum += negative(rng);
        }
        cross += latent_sum * row;
    }
    require_full_rank(gram);
    return conjugate_draw(gram, cross, rng);
}

Eigen::VectorXd update_probit_coefficients(std::span<const int> responses, const Eigen::MatrixXd& design,
                                           const Eigen::VectorXd& current, Rng& rng) {
    return update_probit_coefficients(ProbitCells::group(responses, design), current, rng);
}

Eigen::VectorXd draw_coefficients_given_latents(const Eigen::MatrixXd& design, const Eigen::VectorXd& latents,
                                                Rng& rng) {
    if (design.rows() != latents.size()) throw ArityError("latent count does not match design rows");
    return conjugate_draw(design.transpose() * design, design.transpose() * latents, rng);
}

}  // namespace anmi
