#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ebt/data/prior.hpp"
#include "ebt/decision/decision.hpp"
#include "ebt/model/config.hpp"
#include "ebt/train/train.hpp"

namespace ebt {

enum class SweepKind { distance, n };
enum class Variant { oracle, pretrained, finetuned, scratch, plugin };

const char* sweep_name(SweepKind kind);
SweepKind parse_sweep(const std::string& name);
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct LabeledPrior {
  std::string label;
  Prior prior;
};

struct OracleSettings {
  std::size_t mc_atoms = 1000000;  ///< atoms for priors without a closed form
  std::size_t dp_draws = 100000;   ///< sequence length when freezing a DP target
};

struct ExperimentConfig {
  std::string name;
  SweepKind sweep = SweepKind::distance;
  double sigma = 1.0;
  std::vector<LabeledPrior> targets;
  /// Explicit priors first, then `random_pretrain` draws of random_pretrain_prior.
  std::vector<LabeledPrior> pretrain_priors;
  ModelConfig model;
  PretrainConfig pretrain;
  /// Sequences per pretraining corpus; 0 -> batch_size * iterations (each used once).
  std::size_t corpus_sequences = 0;
  FinetuneConfig finetune;
  std::vector<std::size_t> n_grid{500};
  std::vector<Variant> variants{Variant::oracle, Variant::pretrained, Variant::finetuned, Variant::scratch,
                                Variant::plugin};
  std::vector<std::uint64_t> seeds{1};
  std::uint64_t root_seed = 0;
  std::size_t test_size = 500;
  DecisionSpec decision = NewsvendorSpec{2.0, 2.0, 1.0};
  OracleSettings oracle;
  std::size_t hellinger_samples = 100000;
  std::size_t workers = 1;
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError: empty or non-increasing N grid, no variants, invalid
  /// priors, sigma mismatch with the decision spec, ...
  void validate() const;
  bool has_variant(Variant v) const;
  std::size_t sequences_per_corpus() const;
};

/// JSON text. A top-level "extends": "<preset>" merge-patches the document
/// onto that preset first.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

const std::vector<std::string>& preset_names();
/// Raw JSON of a shipped preset (fig3, fig4, fig5, ci).
const std::string& preset_text(const std::string& name);
ExperimentConfig load_preset(const std::string& name);

/// Canonical JSON rendering, round-trips through parse_config.
std::string config_to_json(const ExperimentConfig& config);

std::string prior_to_json(const Prior& prior);
Prior prior_from_json(const std::string& text);

}  // namespace ebt
