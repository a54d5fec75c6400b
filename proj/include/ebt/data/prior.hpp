#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ebt/autodiff/tensor.hpp"
#include "ebt/data/rng.hpp"

namespace ebt {

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
};

/// Exponential on [0, inf) parameterised by its mean (rate = 1/mean).
struct Exponential {
  double mean = 1.0;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

struct PointMassSet {
  std::vector<double> atoms;
  std::vector<double> weights;
};

/// Mixture over randomly initialised two-layer networks R^input_dim -> (0,1).
struct NeuralPrior {
  std::uint64_t seed = 0;
  std::size_t n_nets = 4;
  std::size_t input_dim = 4;
  std::size_t hidden = 16;
};

struct Prior;

struct DirichletProcess {
  double alpha = 1.0;
  std::shared_ptr<const Prior> base;
};

/// Distribution G of the latent per-task parameters. Univariate; for p > 1
/// the parametric families are applied coordinatewise.
struct Prior {
  std::variant<GaussianMixture, Exponential, DirichletProcess, NeuralPrior, Uniform, PointMassSet> kind;

  static Prior gaussian_mixture(std::vector<double> weights, std::vector<double> means,
                                std::vector<double> variances);
  static Prior exponential(double mean);
  static Prior dirichlet_process(double alpha, Prior base);
  static Prior neural(std::uint64_t seed, std::size_t n_nets = 4, std::size_t input_dim = 4,
                      std::size_t hidden = 16);
  static Prior uniform(double lo, double hi);
  static Prior point_masses(std::vector<double> atoms, std::vector<double> weights = {});

  template <typename T>
  const T* as() const {
    return std::get_if<T>(&kind);
  }
};

/// Throws ConfigError when an invariant (weights on the simplex, positive
/// variances, lo < hi, ...) fails.
void validate(const Prior& prior);

/// Stable human-readable label, also used as a seed key.
std::string describe(const Prior& prior);

/// Closed-form moments where they exist (mixture, exponential, uniform, point masses).
std::optional<double> prior_mean(const Prior& prior);
std::optional<double> prior_variance(const Prior& prior);

/// n x p matrix of draws. DirichletProcess follows the sequential
/// (Chinese-restaurant) scheme, so rows are exchangeable but not independent.
Tensor sample_prior(const Prior& prior, std::size_t n, Rng& rng, std::size_t p = 1);

/// Three equal-weight unit-variance components at independent Unif[0,5] locations.
GaussianMixture random_pretrain_prior(Rng& rng);

/// Freezes a random measure into a concrete distribution: a DirichletProcess
/// becomes the PointMassSet of a length-`draws` sequential sample. Other
/// priors are returned unchanged.
Prior realize(const Prior& prior, std::size_t draws, Rng& rng);

enum class Activation { gelu, relu, selu, celu, silu, tanhshrink };

double apply_activation(Activation act, double x);
const char* activation_name(Activation act);

/// Deterministic network bank behind a NeuralPrior.
class NeuralNetBank {
 public:
  explicit NeuralNetBank(const NeuralPrior& spec);

  std::size_t size() const noexcept { return nets_.size(); }
  Activation activation(std::size_t net) const { return nets_.at(net).act; }
  /// sigmoid(w2 · act(W1 x + b1) + b2)
  double evaluate(std::size_t net, const std::vector<double>& x) const;
  /// One draw: uniform input on [0,1]^input_dim, uniformly chosen network.
  double sample(Rng& rng) const;

 private:
  struct Net {
    Activation act;
    std::vector<double> w1, b1, w2;
    double b2 = 0.0;
  };
  NeuralPrior spec_;
  std::vector<Net> nets_;
};

}  // namespace ebt
