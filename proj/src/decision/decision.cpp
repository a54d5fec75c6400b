#include "ebt/decision/decision.hpp"

#include <cmath>

#include "ebt/errors.hpp"
#include "ebt/oracle/normal.hpp"

namespace ebt {

void NewsvendorSpec::validate() const {
  if (!(b > 0.0) || !(h > 0.0) || !(sigma > 0.0)) throw ConfigError("newsvendor: b, h and sigma must be > 0");
}

void PricingSpec::validate() const {
  if (!(nu > 0.0)) throw ConfigError("pricing: nu must be > 0");
}

double newsvendor_order(double theta_hat, const NewsvendorSpec& spec) {
  spec.validate();
  if (spec.b == spec.h) return theta_hat;
  return theta_hat + spec.sigma * norm_quantile(spec.b / (spec.b + spec.h));
}

double newsvendor_cost(double x, double theta, const NewsvendorSpec& spec) {
  spec.validate();
  const double z = (theta - x) / spec.sigma;
  const double pdf = norm_pdf(z);
  return spec.b * ((theta - x) * norm_cdf(z) + spec.sigma * pdf) +
         spec.h * ((x - theta) * norm_cdf(-z) + spec.sigma * pdf);
}

double pricing_price(double theta_hat, const PricingSpec& spec) {
  spec.validate();
  return theta_hat / (2.0 * spec.nu);
}

double pricing_revenue(double x, double theta, const PricingSpec& spec) {
  spec.validate();
  return x * theta - spec.nu * x * x;
}

double decide(const DecisionSpec& spec, double theta_hat) {
  if (const auto* nv = std::get_if<NewsvendorSpec>(&spec)) return newsvendor_order(theta_hat, *nv);
  return pricing_price(theta_hat, std::get<PricingSpec>(spec));
}

double decision_loss(const DecisionSpec& spec, double x, double theta) {
  if (const auto* nv = std::get_if<NewsvendorSpec>(&spec)) return newsvendor_cost(x, theta, *nv);
  return -pricing_revenue(x, theta, std::get<PricingSpec>(spec));
}

ExcessRisk excess_risk(const Tensor& estimates, const Tensor& oracle_estimates, const Tensor& thetas,
                       const DecisionSpec& spec) {
  if (estimates.shape() != oracle_estimates.shape() || estimates.shape() != thetas.shape()) {
    throw ShapeError("excess_risk: estimates " + shape_string(estimates.shape()) + ", oracle " +
                     shape_string(oracle_estimates.shape()) + ", thetas " + shape_string(thetas.shape()));
  }
  const std::size_t n = thetas.rows();
  const std::size_t p = thetas.cols();
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Per-instance gap summed over the p coordinates (independent products).
    double gap = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      const std::size_t j = i * p + k;
      gap += decision_loss(spec, decide(spec, estimates[j]), thetas[j]) -
             decision_loss(spec, decide(spec, oracle_estimates[j]), thetas[j]);
    }
    sum += gap;
    sum_sq += gap * gap;
  }
  ExcessRisk out;
  out.mean = sum / double(n);
  if (n > 1) out.std_error = std::sqrt(std::max(0.0, (sum_sq - n * out.mean * out.mean) / double(n - 1)) / double(n));
  if (!std::isfinite(out.mean)) throw NumericalError("excess_risk: non-finite result");
  return out;
}

ExcessRisk excess_risk(const Estimator& estimator, const Oracle& oracle, const DecisionSpec& spec,
                       const Dataset& test_set) {
  if (!test_set.has_labels()) throw ContractError("excess_risk: test set must carry thetas");
  return excess_risk(estimator(test_set.observations), oracle.posterior_mean(test_set.observations),
                     test_set.thetas, spec);
}

}  // namespace ebt
