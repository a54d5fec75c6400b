#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "ebt/autodiff/tensor.hpp"
#include "ebt/data/dataset.hpp"
#include "ebt/data/prior.hpp"
#include "ebt/data/rng.hpp"
#include "ebt/model/checkpoint.hpp"

namespace ebt {

enum class OracleBackend { closed_form, monte_carlo };

inline constexpr std::size_t kMinAtoms = 10000;

/// Weighted support points. Nearby atoms are merged into bins of width
/// `resolution` (each bin collapses to its weighted mean), which bounds
/// evaluation cost without changing the posterior mean beyond O(resolution^2).
struct AtomSet {
  std::vector<double> atoms;
  std::vector<double> weights;  ///< sums to 1
};

AtomSet compress_atoms(std::vector<double> atoms, std::vector<double> weights, double resolution);

/// Prior atoms for the Monte Carlo backend. Mixture, exponential and uniform
/// priors are stratified through the quantile function of a proposal (one
/// jittered draw per stratum; mixtures and exponentials use a proposal twice
/// as wide, with importance weights); neural priors are drawn i.i.d.; a
/// Dirichlet process is realised once and contributes its point masses.
AtomSet draw_prior_atoms(const Prior& prior, std::size_t count, std::uint64_t seed);

/// f_G: density of d = theta + sigma z, univariate.
class MarginalDensity {
 public:
  /// Closed form for mixture, exponential, uniform and point-mass priors.
  static MarginalDensity closed_form(const Prior& prior, double sigma);
  /// Smoothed atom mixture sum_m w_m N(.; theta_m, sigma^2).
  static MarginalDensity monte_carlo(const Prior& prior, double sigma, std::size_t atom_count, std::uint64_t seed);
  static MarginalDensity from_atoms(AtomSet atoms, double sigma);
  /// Closed form where available, otherwise Monte Carlo with the given atom count.
  static MarginalDensity best_available(const Prior& prior, double sigma, std::size_t atom_count,
                                        std::uint64_t seed);

  double density(double d) const;
  double log_density(double d) const;
  /// One draw of d.
  double sample(Rng& rng) const;

  OracleBackend backend() const noexcept { return backend_; }
  double sigma() const noexcept { return sigma_; }
  const Prior& prior() const noexcept { return prior_; }
  /// Empty for parametric closed forms.
  const AtomSet& atoms() const noexcept { return atoms_; }

  /// E[theta | d].
  double posterior_mean(double d) const;

 private:
  MarginalDensity(Prior prior, double sigma, OracleBackend backend, AtomSet atoms);
  double atom_log_density(double d) const;
  double atom_posterior_mean(double d) const;

  Prior prior_;
  double sigma_;
  OracleBackend backend_;
  AtomSet atoms_;
  std::vector<double> atom_cdf_;
};

/// Bayes rule T*(d) = E[theta | d] under a known prior.
class Oracle {
 public:
  static Oracle closed_form(const Prior& prior, double sigma);
  static Oracle monte_carlo(const Prior& prior, double sigma, std::size_t atom_count, std::uint64_t seed);
  static Oracle best_available(const Prior& prior, double sigma, std::size_t atom_count, std::uint64_t seed);
  explicit Oracle(MarginalDensity marginal) : marginal_(std::move(marginal)) {}

  double posterior_mean(double d) const;
  /// Coordinatewise posterior means for an N x p matrix of observations.
  Tensor posterior_mean(const Tensor& observations) const;

  const MarginalDensity& marginal() const noexcept { return marginal_; }
  double sigma() const noexcept { return marginal_.sigma(); }
  OracleBackend backend() const noexcept { return marginal_.backend(); }

 private:
  MarginalDensity marginal_;
};

/// d + sigma^2 d/dd log f(d), central difference with step h.
double tweedie_posterior_mean(const MarginalDensity& marginal, double d, double h = 1e-5);

using Estimator = std::function<Tensor(const Tensor& observations)>;

/// Mean over tokens of ||T(d_i) - T*(d_i)||^2.
double estimation_error(const Tensor& estimates, const Tensor& oracle_estimates);
double estimation_error(const Estimator& estimator, const Oracle& oracle, const Dataset& test_set);

/// H(f, g) with H^2 = 1 - E_f sqrt(g/f), x ~ f.
double hellinger_mc(const MarginalDensity& f, const MarginalDensity& g, std::size_t n_samples, Rng& rng);
/// Both directions averaged on the H^2 scale.
double hellinger_symmetric(const MarginalDensity& f, const MarginalDensity& g, std::size_t n_samples, Rng& rng);

/// Euclidean distance between sorted component-mean vectors. Throws ConfigError
/// unless both mixtures share component count, weights and variances.
double l2_mean_distance(const GaussianMixture& a, const GaussianMixture& b);

/// Atom caches travel in checkpoints as oracle/atoms, oracle/weights, oracle/sigma.
void store_oracle_atoms(Checkpoint& ckpt, const MarginalDensity& marginal);
std::optional<MarginalDensity> load_oracle_atoms(const Checkpoint& ckpt);

}  // namespace ebt
