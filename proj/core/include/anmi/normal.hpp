#pragma once

namespace anmi {

/// Standard normal density.
double normal_pdf(double x) noexcept;

/// Standard normal CDF, accurate to full double precision in both tails.
double normal_cdf(double x) noexcept;

/// log Phi(x), finite for all finite x.
double log_normal_cdf(double x) noexcept;

/// Inverse of the standard normal CDF (Wichura AS241, ~1e-16 relative).
/// Returns -inf / +inf at p = 0 / 1 and NaN outside [0, 1].
double normal_quantile(double p) noexcept;

/// phi(x) / Phi(x), stable for very negative x.
double inverse_mills_ratio(double x) noexcept;

}  // namespace anmi
