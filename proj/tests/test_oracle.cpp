#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "doctest.h"
#include "ebt/errors.hpp"
#include "ebt/oracle/normal.hpp"
#include "ebt/oracle/oracle.hpp"

using namespace ebt;
using boost::math::quadrature::gauss_kronrod;

namespace {

Prior target_mixture() { return Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 1, 1}); }

template <class F>
double integrate(F f, double lo, double hi) {
  return gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, 1e-14);
}

/// Quadrature posterior mean for a prior density g on [lo, hi]; the Gaussian
/// kernel is shifted by its peak so far-tail observations stay representable.
template <class G>
double quadrature_posterior_mean(G log_g, double d, double sigma, double lo, double hi) {
  double peak = -INFINITY;
  for (int i = 0; i <= 2000; ++i) {
    const double t = lo + (hi - lo) * i / 2000.0;
    peak = std::max(peak, log_g(t) - 0.5 * (d - t) * (d - t) / (sigma * sigma));
  }
  auto w = [&](double t) { return std::exp(log_g(t) - 0.5 * (d - t) * (d - t) / (sigma * sigma) - peak); };
  return integrate([&](double t) { return t * w(t); }, lo, hi) / integrate(w, lo, hi);
}

double log_mixture_prior(double t) {
  double s = 0.0;
  for (double m : {1.0, 3.0, 4.0}) s += std::exp(-0.5 * (t - m) * (t - m)) / 3.0;
  return std::log(s);
}

}  // namespace

TEST_CASE("normal helpers") {
  CHECK(norm_cdf(0.0) == 0.5);
  CHECK(norm_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-14));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-13));
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0));
  for (double u : {1e-12, 1e-5, 0.1, 0.3, 0.7, 0.99, 1 - 1e-9}) {
    CHECK(norm_cdf(norm_quantile(u)) == doctest::Approx(u).epsilon(1e-10));
  }
  CHECK_THROWS_AS(norm_quantile(0.0), ContractError);
  // Tail branches agree with direct evaluation where both are representable.
  for (double z : {-8.5, -10.0, -20.0}) {
    CHECK(norm_log_cdf(z) == doctest::Approx(std::log(norm_cdf(z))).epsilon(1e-12));
    CHECK(inverse_mills(z) == doctest::Approx(norm_pdf(z) / norm_cdf(z)).epsilon(1e-12));
  }
  CHECK(std::isfinite(inverse_mills(-1e4)));
  CHECK(inverse_mills(-1e4) == doctest::Approx(1e4).epsilon(1e-7));
}

TEST_CASE("conjugate Gaussian posterior mean") {
  Oracle o = Oracle::closed_form(Prior::gaussian_mixture({1.0}, {0.0}, {1.0}), 1.0);
  CHECK(o.posterior_mean(2.0) == doctest::Approx(1.0).epsilon(1e-15));
  Oracle o2 = Oracle::closed_form(Prior::gaussian_mixture({1.0}, {1.5}, {4.0}), 0.5);
  CHECK(o2.posterior_mean(-1.0) == doctest::Approx((4.0 * -1.0 + 0.25 * 1.5) / 4.25).epsilon(1e-14));
}

TEST_CASE("point mass posterior is the atom") {
  Oracle o = Oracle::closed_form(Prior::point_masses({2.25}), 1.0);
  for (double d : {-30.0, 0.0, 2.25, 7.0, 40.0}) CHECK(o.posterior_mean(d) == 2.25);
}

TEST_CASE("mixture oracle matches adaptive quadrature") {
  Oracle o = Oracle::closed_form(target_mixture(), 1.0);
  CHECK(std::abs(o.posterior_mean(3.0) - quadrature_posterior_mean(log_mixture_prior, 3.0, 1.0, -15, 20)) <= 1e-8);
  for (double d = -4.0; d <= 10.0; d += 0.5) {
    CHECK(std::abs(o.posterior_mean(d) - quadrature_posterior_mean(log_mixture_prior, d, 1.0, -15, 20)) <= 1e-8);
  }
}

TEST_CASE("exponential oracle matches quadrature, including the Mills-ratio tail") {
  for (double mean : {0.5, 5.0}) {
    Oracle o = Oracle::closed_form(Prior::exponential(mean), 1.0);
    auto log_g = [&](double t) { return -t / mean; };
    for (double d : {-40.0, -12.0, -3.0, 0.0, 1.0, 4.0, 15.0}) {
      const double q = quadrature_posterior_mean(log_g, d, 1.0, 0.0, std::max(60.0, d + 40.0));
      CHECK(std::abs(o.posterior_mean(d) - q) <= 1e-8 * std::max(1.0, std::abs(q)));
    }
    const double far = o.posterior_mean(-1e3);
    CHECK(std::isfinite(far));
    CHECK(far > 0.0);
    CHECK(far == doctest::Approx(1.0 / (1e3 + 1.0 / mean)).epsilon(1e-5));
  }
}

TEST_CASE("uniform oracle matches quadrature") {
  Oracle o = Oracle::closed_form(Prior::uniform(0.0, 5.0), 1.0);
  auto log_g = [](double) { return 0.0; };
  for (double d : {-30.0, -3.0, 0.0, 2.5, 4.0, 9.0, 35.0}) {
    CHECK(std::abs(o.posterior_mean(d) - quadrature_posterior_mean(log_g, d, 1.0, 0.0, 5.0)) <= 1e-8);
  }
}

TEST_CASE("property: Monte Carlo backend agrees with the closed form within 1e-2 over +-4 marginal sd") {
  const Prior prior = target_mixture();
  Oracle exact = Oracle::closed_form(prior, 1.0);
  Oracle mc = Oracle::monte_carlo(prior, 1.0, 1000000, 2024);
  const double mean = 8.0 / 3.0, sd = std::sqrt(1.0 + 14.0 / 9.0 + 1.0);
  double worst = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const double d = mean - 4 * sd + 8 * sd * i / 200.0;
    worst = std::max(worst, std::abs(exact.posterior_mean(d) - mc.posterior_mean(d)));
  }
  CHECK(worst <= 1e-2);
  CHECK(std::abs(exact.posterior_mean(3.0) - mc.posterior_mean(3.0)) <= 1e-2);
  CHECK_THROWS_AS(Oracle::monte_carlo(prior, 1.0, 9999, 1), ContractError);
  CHECK_THROWS_AS(Oracle::closed_form(Prior::neural(1), 1.0), ContractError);
}

TEST_CASE("Monte Carlo backend on exponential and uniform priors") {
  for (const Prior& prior : {Prior::exponential(5.0), Prior::uniform(0.0, 5.0)}) {
    Oracle exact = Oracle::closed_form(prior, 1.0);
    Oracle mc = Oracle::monte_carlo(prior, 1.0, 1000000, 7);
    for (double d = -3.0; d <= 15.0; d += 0.25) CHECK(std::abs(exact.posterior_mean(d) - mc.posterior_mean(d)) <= 1e-2);
  }
}

TEST_CASE("tweedie cross-check") {
  {
    MarginalDensity m = MarginalDensity::closed_form(Prior::gaussian_mixture({1.0}, {0.5}, {2.0}), 1.0);
    for (double d : {-3.0, 0.0, 1.0, 4.0}) {
      CHECK(std::abs(tweedie_posterior_mean(m, d) - (2.0 * d + 0.5) / 3.0) <= 1e-6);
    }
  }
  {
    MarginalDensity m = MarginalDensity::closed_form(target_mixture(), 1.0);
    for (int d = -2; d <= 8; ++d) CHECK(std::abs(tweedie_posterior_mean(m, d) - m.posterior_mean(d)) <= 1e-5);
  }
  {
    MarginalDensity m = MarginalDensity::closed_form(Prior::uniform(-50.0, 50.0), 1.0);
    CHECK(std::abs(tweedie_posterior_mean(m, 0.3) - 0.3) <= 1e-6);
  }
  {
    MarginalDensity m = MarginalDensity::closed_form(Prior::point_masses({0.0}), 1.0);
    CHECK_THROWS_AS(tweedie_posterior_mean(m, 40.0), NumericalError);
  }
}

TEST_CASE("property: Tweedie identity wherever the marginal exceeds 1e-8") {
  const std::vector<Prior> priors{target_mixture(), Prior::exponential(5.0), Prior::exponential(0.5),
                                  Prior::uniform(0.0, 5.0), Prior::point_masses({0.0, 1.0, 4.0}, {0.2, 0.5, 0.3})};
  for (const auto& prior : priors) {
    MarginalDensity m = MarginalDensity::closed_form(prior, 1.0);
    for (double d = -10.0; d <= 25.0; d += 0.1) {
      if (m.density(d) <= 1e-8) continue;
      CHECK(std::abs(tweedie_posterior_mean(m, d) - m.posterior_mean(d)) <= 1e-4);
    }
  }
  MarginalDensity mc = MarginalDensity::monte_carlo(Prior::neural(3), 1.0, 100000, 9);
  for (double d = -3.0; d <= 4.0; d += 0.25) {
    CHECK(std::abs(tweedie_posterior_mean(mc, d) - mc.posterior_mean(d)) <= 1e-4);
  }
}

TEST_CASE("property: marginal densities integrate to one") {
  const std::vector<Prior> priors{target_mixture(), Prior::exponential(5.0), Prior::uniform(0.0, 5.0),
                                  Prior::point_masses({0.0, 1.0}, {0.3, 0.7})};
  for (const auto& prior : priors) {
    MarginalDensity m = MarginalDensity::closed_form(prior, 1.0);
    const double mass = integrate([&](double d) { return m.density(d); }, -30.0, 80.0);
    CHECK(std::abs(mass - 1.0) <= 1e-3);
  }
  MarginalDensity mc = MarginalDensity::monte_carlo(Prior::neural(3), 1.0, 100000, 9);
  CHECK(std::abs(integrate([&](double d) { return mc.density(d); }, -15.0, 16.0) - 1.0) <= 1e-3);
  MarginalDensity dp = MarginalDensity::monte_carlo(Prior::dirichlet_process(1.0, Prior::uniform(0, 5)), 1.0,
                                                    100000, 10);
  CHECK(std::abs(integrate([&](double d) { return dp.density(d); }, -15.0, 20.0) - 1.0) <= 1e-3);
}

TEST_CASE("property: posterior shrinks towards the prior mean") {
  Oracle o = Oracle::closed_form(Prior::gaussian_mixture({1.0}, {2.0}, {0.7}), 1.3);
  for (double d = -10.0; d <= 14.0; d += 0.37) {
    const double t = o.posterior_mean(d);
    CHECK(t > std::min(d, 2.0));
    CHECK(t < std::max(d, 2.0));
  }
}

TEST_CASE("estimation_error") {
  Oracle o = Oracle::closed_form(Prior::gaussian_mixture({1.0}, {0.0}, {1.0}), 1.0);
  HierarchicalConfig cfg{Prior::gaussian_mixture({1.0}, {0.0}, {1.0}), 1.0, 1000000, 1};
  Dataset test = sample_dataset(cfg, 31);
  CHECK(estimation_error([&](const Tensor& d) { return o.posterior_mean(d); }, o, test) == 0.0);
  // Identity estimator vs d/2 with d ~ N(0, 2): E[(d/2)^2] = 0.5.
  const double err = estimation_error([](const Tensor& d) { return d; }, o, test);
  CHECK(std::abs(err - 0.5) <= 3e-3);
  CHECK_THROWS_AS(estimation_error(Tensor::matrix(2, 1), Tensor::matrix(3, 1)), ShapeError);
}

TEST_CASE("hellinger") {
  Rng rng(41);
  MarginalDensity n0 = MarginalDensity::closed_form(Prior::point_masses({0.0}), 1.0);
  MarginalDensity n1 = MarginalDensity::closed_form(Prior::point_masses({1.0}), 1.0);
  MarginalDensity n10 = MarginalDensity::closed_form(Prior::point_masses({10.0}), 1.0);
  CHECK(hellinger_mc(n0, n0, 10000, rng) <= 0.01);
  CHECK(hellinger_mc(n0, n10, 10000, rng) >= 0.99);
  const double h = hellinger_mc(n0, n1, 1000000, rng);
  CHECK(std::abs(h * h - (1.0 - std::exp(-1.0 / 8.0))) <= 0.01);
  CHECK_THROWS_AS(hellinger_mc(n0, n1, 100, rng), ContractError);

  MarginalDensity a = MarginalDensity::closed_form(target_mixture(), 1.0);
  MarginalDensity b = MarginalDensity::closed_form(Prior::exponential(2.0), 1.0);
  Rng r1(5), r2(5);
  const double hab = hellinger_symmetric(a, b, 100000, r1), hba = hellinger_symmetric(b, a, 100000, r2);
  CHECK(hab >= 0.0);
  CHECK(hab <= 1.0);
  CHECK(std::abs(hab - hba) <= 0.01);
}

TEST_CASE("l2 mean distance") {
  auto gmm = [](double a, double b, double c) {
    return *Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {a, b, c}, {1, 1, 1}).as<GaussianMixture>();
  };
  CHECK(l2_mean_distance(gmm(1, 3, 4), gmm(1, 3, 4)) == 0.0);
  CHECK(l2_mean_distance(gmm(1, 3, 4), gmm(1, 3, 5)) == doctest::Approx(1.0));
  CHECK(l2_mean_distance(gmm(0, 0, 0), gmm(1, 3, 4)) == doctest::Approx(std::sqrt(26.0)));
  // Label permutations do not matter.
  CHECK(l2_mean_distance(gmm(4, 1, 3), gmm(1, 3, 4)) == 0.0);
  auto two = *Prior::gaussian_mixture({0.5, 0.5}, {0, 1}, {1, 1}).as<GaussianMixture>();
  CHECK_THROWS_AS(l2_mean_distance(two, gmm(1, 3, 4)), ConfigError);
  auto wide = *Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 2, 1}).as<GaussianMixture>();
  CHECK_THROWS_AS(l2_mean_distance(wide, gmm(1, 3, 4)), ConfigError);
}

TEST_CASE("property: oracle risk is minimal on the target mixture") {
  HierarchicalConfig cfg{target_mixture(), 1.0, 100000, 1};
  Dataset test = sample_dataset(cfg, 51);
  Oracle o = Oracle::closed_form(cfg.prior, 1.0);
  const Tensor est = o.posterior_mean(test.observations);
  CHECK(estimation_error(est, test.thetas) <= estimation_error(test.observations, test.thetas));
}

TEST_CASE("oracle atoms persist in checkpoints") {
  MarginalDensity mc = MarginalDensity::monte_carlo(Prior::neural(8), 1.0, 20000, 3);
  Checkpoint ck;
  ck.config_text = "x=1\n";
  store_oracle_atoms(ck, mc);
  auto back = load_oracle_atoms(decode_checkpoint(encode_checkpoint(ck)));
  REQUIRE(back.has_value());
  for (double d : {-1.0, 0.3, 2.0}) CHECK(back->posterior_mean(d) == doctest::Approx(mc.posterior_mean(d)).epsilon(1e-13));
  CHECK_FALSE(load_oracle_atoms(Checkpoint{}).has_value());
  CHECK_THROWS_AS(store_oracle_atoms(ck, MarginalDensity::closed_form(target_mixture(), 1.0)), ContractError);
}
