#pragma once

namespace ebt {

inline constexpr double kSqrt2 = 1.41421356237309504880;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double norm_pdf(double z);
double norm_log_pdf(double z);
double norm_cdf(double z);
/// log Phi(z), accurate far into the lower tail.
double norm_log_cdf(double z);
/// Phi^{-1}(u) for u in (0, 1).
double norm_quantile(double u);
/// Inverse Mills ratio phi(z) / Phi(z). Uses a continued fraction once
/// Phi(z) is too small for direct division (z < -8).
double inverse_mills(double z);

}  // namespace ebt
