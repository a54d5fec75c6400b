#pragma once

#include <variant>

#include "ebt/data/dataset.hpp"
#include "ebt/oracle/oracle.hpp"

namespace ebt {

struct NewsvendorSpec {
  double b = 2.0;  ///< unit shortage cost
  double h = 2.0;  ///< unit holding cost
  double sigma = 1.0;

  void validate() const;
};

struct PricingSpec {
  double nu = 1.0;

  void validate() const;
};

using DecisionSpec = std::variant<NewsvendorSpec, PricingSpec>;

/// theta_hat + sigma Phi^{-1}(b / (b + h))
double newsvendor_order(double theta_hat, const NewsvendorSpec& spec);
/// E[b (d - x)_+ + h (x - d)_+] for d ~ N(theta, sigma^2).
double newsvendor_cost(double x, double theta, const NewsvendorSpec& spec);

double pricing_price(double theta_hat, const PricingSpec& spec);
/// x theta - nu x^2
double pricing_revenue(double x, double theta, const PricingSpec& spec);

/// Decision induced by an estimate.
double decide(const DecisionSpec& spec, double theta_hat);
/// Objective oriented as a loss: newsvendor cost, or negated revenue.
double decision_loss(const DecisionSpec& spec, double x, double theta);

struct ExcessRisk {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean over test points of loss(x(T_hat(d)), theta) - loss(x(T*(d)), theta):
/// zero for the oracle, positive when worse, for cost and revenue problems alike.
ExcessRisk excess_risk(const Tensor& estimates, const Tensor& oracle_estimates, const Tensor& thetas,
                       const DecisionSpec& spec);
ExcessRisk excess_risk(const Estimator& estimator, const Oracle& oracle, const DecisionSpec& spec,
                       const Dataset& test_set);

}  // namespace ebt
