#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ebt/autodiff/tensor.hpp"
#include "ebt/data/prior.hpp"

namespace ebt {

/// theta_i ~ G, d_i | theta_i ~ N(theta_i, sigma^2 I_p).
struct HierarchicalConfig {
  Prior prior;
  double sigma = 1.0;
  std::size_t n = 1;
  std::size_t p = 1;

  void validate() const;
};

struct Dataset {
  Tensor thetas;        ///< n x p; empty when labels are withheld
  Tensor observations;  ///< n x p
  std::uint64_t seed = 0;

  bool has_labels() const noexcept { return !thetas.empty(); }
  std::size_t size() const { return observations.rows(); }
  Dataset without_labels() const { return Dataset{Tensor(), observations, seed}; }
};

Dataset sample_dataset(const HierarchicalConfig& config, std::uint64_t seed);
Dataset sample_dataset(const HierarchicalConfig& config, Rng& rng);

/// Adds N(0, sigma^2) channel noise to given latent parameters.
Tensor observe(const Tensor& thetas, double sigma, Rng& rng);

/// CSV with header `index,theta,d`; theta left empty when withheld. p = 1 only.
void write_dataset_csv(std::ostream& out, const Dataset& data);

/// Lazily generated labelled corpus: sequence k is a function of (seed, k) only.
class PretrainCorpus {
 public:
  PretrainCorpus(Prior prior, std::size_t sequences, std::size_t seq_len, double sigma, std::uint64_t seed,
                 std::size_t p = 1);

  std::size_t size() const noexcept { return sequences_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t total_observations() const noexcept { return sequences_ * seq_len_; }
  double sigma() const noexcept { return sigma_; }
  std::size_t dim() const noexcept { return p_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const Prior& prior() const noexcept { return prior_; }

  Dataset sequence(std::size_t k) const;
  /// Plain-text manifest: seed, prior description, K, seq_len, sigma.
  std::string manifest() const;

 private:
  Prior prior_;
  std::size_t sequences_;
  std::size_t seq_len_;
  double sigma_;
  std::uint64_t seed_;
  std::size_t p_;
};

PretrainCorpus make_pretrain_corpus(const Prior& prior, std::size_t sequences, std::size_t seq_len, double sigma,
                                    Rng& rng);

}  // namespace ebt
