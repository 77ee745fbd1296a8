#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "anmi/rng.hpp"

namespace anmi {

/// Unit-variance normal with mean `mean` restricted to (lower, upper).
/// Inverse-CDF sampling inside the bulk; Robert's exponential rejection for
/// one-sided regions starting more than three standard deviations out.
class TruncatedNormal {
public:
    /// Throws ParameterDomainError if lower >= upper.
    TruncatedNormal(double mean, double lower, double upper);

    double operator()(Rng& rng) const;

private:
    enum class Kind { Inverse, InverseUpperTail, LowerTailRejection, UpperTailRejection };

    double mean_;
    double a_;  // standardized bounds
    double b_;
    double p_lo_ = 0.0;  // CDF (or survival) values bracketing the region
    double p_hi_ = 1.0;
    double rate_ = 0.0;
    Kind kind_ = Kind::Inverse;
};

double sample_truncated_normal(double mean, double lower, double upper, Rng& rng);

/// Draw from Dirichlet(prior + counts).
std::array<double, 3> update_theta(const std::array<double, 3>& counts, const std::array<double, 3>& prior, Rng& rng);

/// Binary responses grouped by identical design rows: row k of `rows`
/// occurs ones[k] times with response 1 and zeros[k] times with response 0.
struct ProbitCells {
    Eigen::MatrixXd rows;
    std::vector<std::int64_t> ones;
    std::vector<std::int64_t> zeros;

    static ProbitCells group(std::span<const int> responses, const Eigen::MatrixXd& design);

    [[nodiscard]] std::int64_t observations() const noexcept;
};

/// One data-augmentation sweep for a probit model with a N(0, I) prior:
/// latent utilities given `current`, then coefficients from their exact
/// normal full conditional. Throws SingularDesignError if the design is
/// rank deficient; zero observations give a prior draw.
Eigen::VectorXd update_probit_coefficients(const ProbitCells& cells, const Eigen::VectorXd& current, Rng& rng);

Eigen::VectorXd update_probit_coefficients(std::span<const int> responses, const Eigen::MatrixXd& design,
                                           const Eigen::VectorXd& current, Rng& rng);

/// Coefficient draw given fixed latent utilities: N((I + X'X)^-1 X'z, (I + X'X)^-1).
Eigen::VectorXd draw_coefficients_given_latents(const Eigen::MatrixXd& design, const Eigen::VectorXd& latents,
                                                Rng& rng);

}  // namespace anmi
