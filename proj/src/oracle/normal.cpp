#include "ebt/oracle/normal.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <limits>

#include "ebt/errors.hpp"

namespace ebt {
namespace {

constexpr double kTailSwitch = -8.0;

/// Upper-tail Mills ratio R(x) = (1 - Phi(x)) / phi(x) for x > 0, via the
/// classical continued fraction 1/(x + 1/(x + 2/(x + 3/(x + ...)))),
/// evaluated with the modified Lentz algorithm.
double mills_ratio_upper(double x) {
  constexpr double tiny = 1e-300;
  double f = x;
  double c = x, d = 0.0;
  for (int k = 1; k < 500; ++k) {
    d = x + k * d;
    d = 1.0 / (std::abs(d) < tiny ? tiny : d);
    c = x + k / c;
    if (std::abs(c) < tiny) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

}  // namespace

double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double norm_log_pdf(double z) { return -0.5 * z * z - 0.91893853320467274178; }

double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

double norm_log_cdf(double z) {
  if (z >= kTailSwitch) return std::log(norm_cdf(z));
  return norm_log_pdf(z) + std::log(mills_ratio_upper(-z));
}

double norm_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) throw ContractError("norm_quantile: u must lie in (0, 1)");
  return -kSqrt2 * boost::math::erfc_inv(2.0 * u);
}

double inverse_mills(double z) {
  if (z >= kTailSwitch) return norm_pdf(z) / norm_cdf(z);
  return 1.0 / mills_ratio_upper(-z);
}

}  // namespace ebt
