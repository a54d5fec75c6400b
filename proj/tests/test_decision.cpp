#include <cmath>

#include "doctest.h"
#include "ebt/decision/decision.hpp"
#include "ebt/errors.hpp"

using namespace ebt;

namespace {

// Double quadrature of E[cost(d, theta) - cost(d/2, theta)] for theta ~ N(0,1),
// d = theta + N(0,1), b = h = 2, computed independently before the build.
constexpr double kPluginExcessRisk = 0.3023482865793456;

}  // namespace

TEST_CASE("newsvendor order") {
  NewsvendorSpec even{2.0, 2.0, 1.0};
  CHECK(newsvendor_order(3.7, even) == 3.7);
  NewsvendorSpec skew{39.0, 1.0, 1.0};  // fractile 0.975
  CHECK(newsvendor_order(0.0, skew) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  for (double delta : {-3.0, 0.5, 10.0}) {
    CHECK(newsvendor_order(1.0 + delta, skew) - newsvendor_order(1.0, skew) == doctest::Approx(delta).epsilon(1e-14));
  }
  CHECK_THROWS_AS(newsvendor_order(0.0, NewsvendorSpec{0.0, 1.0, 1.0}), ConfigError);
}

TEST_CASE("newsvendor cost") {
  NewsvendorSpec even{2.0, 2.0, 1.0};
  CHECK(newsvendor_cost(1.0, 1.0, even) == doctest::Approx(2.0 * std::sqrt(2.0 / M_PI)).epsilon(1e-14));
  CHECK(newsvendor_cost(1e3, 0.0, even) > newsvendor_cost(10.0, 0.0, even));
  CHECK(newsvendor_cost(-1e3, 0.0, even) > newsvendor_cost(-10.0, 0.0, even));
  CHECK(newsvendor_cost(50.0, 0.0, even) > 0.0);
}

TEST_CASE("property: newsvendor cost matches Monte Carlo within 4 standard errors") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    NewsvendorSpec spec{rng.uniform(0.5, 5.0), rng.uniform(0.5, 5.0), rng.uniform(0.3, 3.0)};
    const double theta = rng.uniform(-3, 3), x = theta + rng.uniform(-3, 3);
    const int n = 1000000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = theta + spec.sigma * rng.normal();
      const double c = spec.b * std::max(d - x, 0.0) + spec.h * std::max(x - d, 0.0);
      s += c;
      s2 += c * c;
    }
    const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
    const double exact = newsvendor_cost(x, theta, spec);
    CHECK(std::abs(mean - exact) <= 4.0 * se);
    CHECK(std::abs(mean - exact) / exact <= 3e-3);
  }
}

TEST_CASE("property: newsvendor order minimises expected cost") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    NewsvendorSpec spec{rng.uniform(0.5, 5.0), rng.uniform(0.5, 5.0), rng.uniform(0.3, 3.0)};
    const double theta = rng.uniform(-2, 2);
    double best_x = 0.0, best = INFINITY;
    for (double x = theta - 8.0; x <= theta + 8.0; x += 1e-3) {
      const double c = newsvendor_cost(x, theta, spec);
      if (c < best) {
        best = c;
        best_x = x;
      }
    }
    CHECK(std::abs(best_x - newsvendor_order(theta, spec)) <= 1e-3);
  }
}

TEST_CASE("pricing") {
  PricingSpec spec{1.0};
  CHECK(pricing_price(4.0, spec) == 2.0);
  CHECK(pricing_revenue(2.0, 4.0, spec) == 4.0);
  CHECK(pricing_price(0.0, spec) == 0.0);
  CHECK(pricing_revenue(0.0, 0.0, spec) == 0.0);
  Rng rng(3);
  PricingSpec s2{0.7};
  for (int i = 0; i < 100; ++i) {
    const double theta = rng.uniform(0, 10), x = rng.uniform(-5, 15);
    CHECK(pricing_revenue(pricing_price(theta, s2), theta, s2) >= pricing_revenue(x, theta, s2));
  }
  CHECK_THROWS_AS(pricing_price(1.0, PricingSpec{0.0}), ConfigError);
}

TEST_CASE("property: decisions are Lipschitz in the estimate") {
  Rng rng(4);
  NewsvendorSpec nv{3.0, 1.0, 1.5};
  PricingSpec pr{0.8};
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10);
    CHECK(std::abs(std::abs(newsvendor_order(a, nv) - newsvendor_order(b, nv)) - std::abs(a - b)) <= 1e-12);
    CHECK(std::abs(std::abs(pricing_price(a, pr) - pricing_price(b, pr)) - std::abs(a - b) / 1.6) <= 1e-12);
  }
}

TEST_CASE("excess risk") {
  const Prior prior = Prior::gaussian_mixture({1.0}, {0.0}, {1.0});
  Oracle oracle = Oracle::closed_form(prior, 1.0);
  Dataset test = sample_dataset(HierarchicalConfig{prior, 1.0, 1000000, 1}, 77);
  const DecisionSpec spec = NewsvendorSpec{2.0, 2.0, 1.0};

  auto self = excess_risk([&](const Tensor& d) { return oracle.posterior_mean(d); }, oracle, spec, test);
  CHECK(self.mean == 0.0);

  auto plugin = excess_risk([](const Tensor& d) { return d; }, oracle, spec, test);
  CHECK(plugin.mean > 0.0);
  CHECK(std::abs(plugin.mean - kPluginExcessRisk) <= 4.0 * plugin.std_error);

  // Pricing: oracle-relative revenue gap is positive for the plug-in too.
  const DecisionSpec pricing = PricingSpec{1.0};
  auto pr = excess_risk([](const Tensor& d) { return d; }, oracle, pricing, test);
  // E[(d - d/2)^2] / 4 = 0.5 / 4 for nu = 1.
  CHECK(std::abs(pr.mean - 0.125) <= 4.0 * pr.std_error);
}

TEST_CASE("property: excess risk is non-negative up to noise with an exact oracle") {
  const Prior prior = Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 1, 1});
  Oracle oracle = Oracle::closed_form(prior, 1.0);
  Dataset test = sample_dataset(HierarchicalConfig{prior, 1.0, 20000, 1}, 78);
  const DecisionSpec spec = NewsvendorSpec{2.0, 2.0, 1.0};
  for (double shrink : {0.0, 0.3, 0.8, 1.0, 1.2}) {
    auto er = excess_risk([&](const Tensor& d) {
      Tensor out = d;
      for (auto& v : out.data()) v = 8.0 / 3.0 + shrink * (v - 8.0 / 3.0);
      return out;
    }, oracle, spec, test);
    CHECK(er.mean >= -3.0 * er.std_error);
  }
}
