#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ebt/data/dataset.hpp"
#include "ebt/experiment/config.hpp"
#include "ebt/experiment/records.hpp"
#include "ebt/model/transformer.hpp"
#include "ebt/oracle/oracle.hpp"

namespace ebt {

/// Missing or unusable run artifacts (checkpoints, manifests, data files).
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainEntry {
  std::size_t index = 0;
  std::string label;
  std::string prior_json;
  std::string checkpoint;  ///< relative to the output directory
  std::uint64_t corpus_seed = 0;
  std::uint64_t init_seed = 0;
  bool ok = false;
  std::string error;  ///< diagnostic when training diverged
  double final_loss = 0.0;
  std::string checksum;
};

struct Manifest {
  std::string config_name;
  std::uint64_t root_seed = 0;
  std::string model_config;  ///< ModelConfig::to_text
  std::vector<PretrainEntry> entries;
};

std::filesystem::path manifest_path(const std::filesystem::path& out_dir);
std::string checkpoint_name(std::size_t prior_index);

/// Deterministic JSON; no timings.
std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);
Manifest read_manifest(const std::filesystem::path& out_dir);

/// Pretrains one model per pretrain prior (in parallel over cfg.workers),
/// writes checkpoints/<name>.ebtf, a per-prior loss CSV and manifest.json.
/// A diverging prior is recorded as failed and the others continue.
Manifest run_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

/// Loads pretrained model `index`, checking it against the manifest and the
/// configured architecture. Throws ArtifactError when missing or failed.
Model load_pretrained(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::size_t index);

/// Samples held by one (target, seed) evaluation instance.
struct TargetInstance {
  std::size_t target_index = 0;
  std::uint64_t seed = 0;
  std::string label;
  Prior prior;  ///< realised (DP targets are frozen per seed)
  std::shared_ptr<const Oracle> oracle;
  Dataset test;
  Tensor oracle_test;         ///< T*(test observations)
  Tensor finetune_pool;       ///< max(N) x 1; a sample of size N is its first N rows
};

/// Seeded construction shared by the sweeps and the `eval`/`finetune` commands.
std::vector<TargetInstance> build_instances(const ExperimentConfig& cfg, std::ostream* log = nullptr);
Tensor finetune_sample(const TargetInstance& inst, std::size_t n);

struct Evaluation {
  double mse_vs_oracle = 0.0;
  double excess_risk = 0.0;
  double excess_se = 0.0;
};

/// Scores estimates of the instance's test thetas against its oracle.
Evaluation evaluate_estimates(const ExperimentConfig& cfg, const TargetInstance& inst, const Tensor& estimates);
/// The model sees the whole test set as one context.
Evaluation evaluate_model(const ExperimentConfig& cfg, const TargetInstance& inst, const Model& model);

std::uint64_t finetune_seed(const ExperimentConfig& cfg, std::size_t target, std::size_t prior, std::size_t n,
                            std::uint64_t seed);

struct SweepOptions {
  std::ostream* csv = nullptr;      ///< receives the header and rows as cells finish, in cell order
  std::ostream* timings = nullptr;  ///< `run_id,wall_seconds`
  std::ostream* log = nullptr;
};

/// Evaluates every (target, seed, pretrain prior, N, variant) cell. Records
/// carry wall_seconds = 0 so the CSV is a pure function of config and seeds;
/// measured times go to `timings`.
std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                 const SweepOptions& options = {});

}  // namespace ebt
