#include "ebt/data/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "ebt/errors.hpp"

namespace ebt {

void HierarchicalConfig::validate() const {
  ebt::validate(prior);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("hierarchical model: sigma must be > 0");
  if (n == 0) throw ConfigError("hierarchical model: n must be >= 1");
  if (p == 0) throw ConfigError("hierarchical model: p must be >= 1");
}

Tensor observe(const Tensor& thetas, double sigma, Rng& rng) {
  Tensor d = thetas;
  for (auto& v : d.data()) v += sigma * rng.normal();
  return d;
}

Dataset sample_dataset(const HierarchicalConfig& config, Rng& rng) {
  config.validate();
  Rng theta_rng = rng.child(1);
  Rng noise_rng = rng.child(2);
  Tensor thetas = sample_prior(config.prior, config.n, theta_rng, config.p);
  Tensor obs = observe(thetas, config.sigma, noise_rng);
  return Dataset{std::move(thetas), std::move(obs), rng.seed()};
}

Dataset sample_dataset(const HierarchicalConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return sample_dataset(config, rng);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  if (data.observations.cols() != 1) throw ContractError("dataset CSV export supports p = 1 only");
  out << "index,theta,d\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i << ',';
    if (data.has_labels()) {
      std::snprintf(buf, sizeof buf, "%.17g", data.thetas[i]);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", data.observations[i]);
    out << ',' << buf << '\n';
  }
}

PretrainCorpus::PretrainCorpus(Prior prior, std::size_t sequences, std::size_t seq_len, double sigma,
                               std::uint64_t seed, std::size_t p)
    : prior_(std::move(prior)), sequences_(sequences), seq_len_(seq_len), sigma_(sigma), seed_(seed), p_(p) {
  HierarchicalConfig{prior_, sigma_, seq_len_, p_}.validate();
  if (sequences_ == 0) throw ConfigError("pretraining corpus: K must be >= 1");
}

Dataset PretrainCorpus::sequence(std::size_t k) const {
  if (k >= sequences_) throw ContractError("pretraining corpus: sequence index out of range");
  return sample_dataset(HierarchicalConfig{prior_, sigma_, seq_len_, p_}, derive_seed(seed_, {k}));
}

std::string PretrainCorpus::manifest() const {
  std::ostringstream out;
  out << "seed=" << seed_ << "\n"
      << "prior=" << describe(prior_) << "\n"
      << "sequences=" << sequences_ << "\n"
      << "seq_len=" << seq_len_ << "\n"
      << "sigma=" << sigma_ << "\n"
      << "p=" << p_ << "\n"
      << "observations=" << total_observations() << "\n";
  return out.str();
}

PretrainCorpus make_pretrain_corpus(const Prior& prior, std::size_t sequences, std::size_t seq_len, double sigma,
                                    Rng& rng) {
  return PretrainCorpus(prior, sequences, seq_len, sigma, rng.next_u64());
}

}  // namespace ebt
