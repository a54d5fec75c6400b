#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ebt/data/dataset.hpp"
#include "ebt/data/prior.hpp"
#include "ebt/data/rng.hpp"
#include "ebt/errors.hpp"

using namespace ebt;

namespace {

Prior target_mixture() { return Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 1, 1}); }

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= double(xs.size());
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= double(xs.size() - 1);
  return m;
}

}  // namespace

TEST_CASE("rng streams are reproducible and children differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).child(1).next_u64() != Rng(42).child(2).next_u64());
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform_open();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    CHECK(r.index(5) < 5);
  }
}

TEST_CASE("prior validation") {
  CHECK_THROWS_AS(Prior::gaussian_mixture({0.5, 0.6}, {0, 1}, {1, 1}), ConfigError);
  CHECK_THROWS_AS(Prior::gaussian_mixture({0.5, 0.5}, {0, 1}, {1, 0}), ConfigError);
  CHECK_THROWS_AS(Prior::exponential(0.0), ConfigError);
  CHECK_THROWS_AS(Prior::uniform(1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(Prior::dirichlet_process(0.0, Prior::uniform(0, 5)), ConfigError);
  CHECK_NOTHROW(Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 1, 1}));
}

TEST_CASE("DP second draw is fresh with probability alpha/(alpha+1)") {
  Rng rng(1);
  const Prior dp = Prior::dirichlet_process(1.0, Prior::uniform(0, 5));
  int same = 0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    Tensor t = sample_prior(dp, 2, rng);
    same += t[0] == t[1];
  }
  CHECK(std::abs(same / double(reps) - 0.5) <= 0.01);

  // alpha = 3: fresh probability 3/4.
  const Prior dp3 = Prior::dirichlet_process(3.0, Prior::uniform(0, 5));
  same = 0;
  for (int r = 0; r < reps; ++r) {
    Tensor t = sample_prior(dp3, 2, rng);
    same += t[0] == t[1];
  }
  CHECK(std::abs(same / double(reps) - 0.25) <= 0.015);
}

TEST_CASE("DP realisation has few distinct atoms and valid weights") {
  Rng rng(2);
  const Prior dp = Prior::dirichlet_process(1.0, Prior::uniform(0, 5));
  Tensor t = sample_prior(dp, 2000, rng);
  std::set<double> distinct(t.data().begin(), t.data().end());
  // Expected count is about alpha log n ~ 8.
  CHECK(distinct.size() < 40);
  Prior frozen = realize(dp, 2000, rng);
  const auto* pm = frozen.as<PointMassSet>();
  REQUIRE(pm);
  double s = 0.0;
  for (double w : pm->weights) s += w;
  CHECK(std::abs(s - 1.0) <= 1e-12);
  CHECK(realize(Prior::exponential(2), 10, rng).as<Exponential>());
}

TEST_CASE("single point mass always returns its atom") {
  Rng rng(3);
  Tensor t = sample_prior(Prior::point_masses({2.5}), 100, rng);
  for (double v : t.data()) CHECK(v == 2.5);
}

TEST_CASE("exponential sample mean") {
  Rng rng(4);
  Tensor t = sample_prior(Prior::exponential(5.0), 1000000, rng);
  CHECK(std::abs(moments(t.data()).mean - 5.0) <= 0.02);
}

TEST_CASE("property: Monte Carlo moments match closed forms within 4 standard errors") {
  const std::vector<Prior> priors{target_mixture(), Prior::exponential(5.0), Prior::uniform(-1.0, 3.0),
                                  Prior::gaussian_mixture({0.2, 0.8}, {-2, 1}, {0.5, 2})};
  Rng rng(5);
  const std::size_t n = 1000000;
  for (const auto& prior : priors) {
    Tensor t = sample_prior(prior, n, rng);
    const Moments m = moments(t.data());
    const double mu = *prior_mean(prior), var = *prior_variance(prior);
    // SE of the mean sqrt(var/n); SE of the variance sqrt((mu4 - var^2)/n) bounded via the sample.
    double m4 = 0.0;
    for (double x : t.data()) m4 += std::pow(x - m.mean, 4);
    m4 /= double(n);
    CHECK(std::abs(m.mean - mu) <= 4.0 * std::sqrt(var / n));
    CHECK(std::abs(m.var - var) <= 4.0 * std::sqrt((m4 - var * var) / n));
  }
}

TEST_CASE("target mixture moments") {
  CHECK(*prior_mean(target_mixture()) == doctest::Approx(8.0 / 3.0).epsilon(1e-14));
  CHECK(*prior_variance(target_mixture()) == doctest::Approx(1.0 + 14.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("sample_dataset") {
  HierarchicalConfig cfg{target_mixture(), 1e-12, 50, 1};
  Dataset d = sample_dataset(cfg, 9);
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(d.observations[i] - d.thetas[i]) <= 1e-10);

  cfg.sigma = 1.0;
  Dataset a = sample_dataset(cfg, 10), b = sample_dataset(cfg, 10);
  CHECK(a.thetas == b.thetas);
  CHECK(a.observations == b.observations);
  CHECK(sample_dataset(cfg, 11).observations != a.observations);

  cfg.n = 100000;
  Dataset big = sample_dataset(cfg, 12);
  const double var = moments(big.observations.data()).var;
  const double expected = 1.0 + 14.0 / 9.0 + 1.0;
  CHECK(std::abs(var - expected) / expected <= 0.02);

  HierarchicalConfig bad{target_mixture(), 0.0, 10, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.sigma = 1.0;
  bad.n = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("multivariate observations are coordinatewise") {
  HierarchicalConfig cfg{Prior::uniform(0, 1), 0.5, 20, 3};
  Dataset d = sample_dataset(cfg, 13);
  CHECK(d.observations.shape() == Shape{20, 3});
  CHECK(d.thetas.shape() == Shape{20, 3});
  HierarchicalConfig dp{Prior::dirichlet_process(1.0, Prior::uniform(0, 1)), 1.0, 5, 2};
  CHECK_THROWS_AS(sample_dataset(dp, 1), ConfigError);
}

TEST_CASE("dataset CSV export") {
  HierarchicalConfig cfg{Prior::uniform(0, 1), 1.0, 3, 1};
  Dataset d = sample_dataset(cfg, 14);
  std::ostringstream full, hidden;
  write_dataset_csv(full, d);
  write_dataset_csv(hidden, d.without_labels());
  CHECK(full.str().rfind("index,theta,d\n", 0) == 0);
  std::istringstream lines(hidden.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "index,theta,d");
  std::getline(lines, line);
  CHECK(line.rfind("0,,", 0) == 0);
}

TEST_CASE("pretraining corpus") {
  Rng rng(15);
  PretrainCorpus one = make_pretrain_corpus(target_mixture(), 1, 1, 1.0, rng);
  Dataset s = one.sequence(0);
  CHECK(s.size() == 1);
  CHECK(s.has_labels());
  CHECK(std::isfinite(s.observations[0] - s.thetas[0]));

  PretrainCorpus corpus(target_mixture(), 1000, 1000, 2.0, 77);
  CHECK(corpus.total_observations() == 1000000);
  CHECK(corpus.manifest().find("observations=1000000") != std::string::npos);
  CHECK(corpus.sequence(5).observations == corpus.sequence(5).observations);
  std::vector<double> z;
  z.reserve(corpus.total_observations());
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    Dataset seq = corpus.sequence(k);
    for (std::size_t i = 0; i < seq.size(); ++i) z.push_back((seq.observations[i] - seq.thetas[i]) / 2.0);
  }
  const Moments m = moments(z);
  CHECK(std::abs(m.mean) <= 0.01);
  CHECK(std::abs(m.var - 1.0) <= 0.02);
}

TEST_CASE("random pretraining priors") {
  Rng rng(16);
  double sum = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    GaussianMixture g = random_pretrain_prior(rng);
    REQUIRE(g.means.size() == 3);
    for (int j = 0; j < 3; ++j) {
      CHECK(g.weights[j] == 1.0 / 3.0);
      CHECK(g.variances[j] == 1.0);
      CHECK(g.means[j] >= 0.0);
      CHECK(g.means[j] <= 5.0);
      sum += g.means[j];
    }
  }
  CHECK(std::abs(sum / (3.0 * draws) - 2.5) <= 0.02);
}

TEST_CASE("activations") {
  CHECK(apply_activation(Activation::relu, -1.0) == 0.0);
  CHECK(apply_activation(Activation::gelu, 1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(apply_activation(Activation::selu, 1.0) == doctest::Approx(1.0507009873554805).epsilon(1e-15));
  CHECK(apply_activation(Activation::selu, -1.0) ==
        doctest::Approx(1.0507009873554805 * 1.6732632423543772 * (std::exp(-1.0) - 1.0)).epsilon(1e-14));
  CHECK(apply_activation(Activation::celu, -2.0) == doctest::Approx(std::exp(-2.0) - 1.0).epsilon(1e-15));
  CHECK(apply_activation(Activation::silu, 2.0) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(apply_activation(Activation::tanhshrink, 0.5) == doctest::Approx(0.5 - std::tanh(0.5)).epsilon(1e-15));
}

TEST_CASE("property: neural prior draws lie in (0,1) and are seed-determined") {
  const Prior np = Prior::neural(123);
  Rng a(1), b(1);
  Tensor x = sample_prior(np, 20000, a), y = sample_prior(np, 20000, b);
  CHECK(x == y);
  for (double v : x.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  NeuralNetBank bank(*np.as<NeuralPrior>());
  CHECK(bank.size() == 4);
  // A different bank seed gives different networks.
  Rng c(1);
  CHECK(sample_prior(Prior::neural(124), 20000, c) != x);
}

TEST_CASE("describe labels are stable") {
  CHECK(describe(Prior::exponential(5)) == "exp(mean=5)");
  CHECK(describe(Prior::dirichlet_process(1, Prior::uniform(0, 5))) == "dp(alpha=1;base=unif(0,5))");
}
