#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ebt/data/dataset.hpp"
#include "ebt/model/transformer.hpp"

namespace ebt {

enum class DivergenceMode { exact, hutchinson };

const char* divergence_mode_name(DivergenceMode mode);
DivergenceMode parse_divergence_mode(const std::string& name);

struct PretrainConfig {
  std::size_t batch_size = 32;
  std::size_t iterations = 1000;
  std::size_t seq_len = 512;
  double lr = 1e-3;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FinetuneConfig {
  std::size_t epochs = 10;
  std::size_t lora_rank = 8;
  std::vector<std::string> target_modules{"embedding", "output_head"};
  DivergenceMode divergence = DivergenceMode::hutchinson;
  double h = 1e-4;
  std::size_t n_probes = 1;
  double lr = 1e-3;
  double sigma = 1.0;
  double clip_norm = 10.0;
  /// Tokens per optimisation step; 0 means the whole sample when it has at
  /// most 1024 observations, otherwise 256.
  std::size_t batch_tokens = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t effective_batch(std::size_t n) const;
};

struct TrainReport {
  std::vector<double> loss;     ///< one entry per optimisation step
  std::vector<double> wall_ms;  ///< elapsed time at the end of each step
  double wall_seconds = 0.0;
  std::size_t trainable_params = 0;
  std::string checksum;  ///< FNV-1a over the trained tensors, hex
  std::string config_echo;
};

/// CSV `step,loss,wall_ms`.
void write_report_csv(std::ostream& out, const TrainReport& report);

/// Hex FNV-1a digest of tensor names, shapes and raw bytes.
std::string params_checksum(const ParamMap& params);
std::string model_checksum(const Model& model);

/// sum_k ||T(D_k) - Theta_k||^2 over the tokens of one labelled sequence, on tape.
ad::Var mse_loss(const BoundModel& model, const Dataset& sequence);

/// Empirical Stein objective (1/N) sum_i [||T_i||^2 - 2 d_i^T T_i + 2 sigma^2 div_i]
/// on tape. Hutchinson mode draws Rademacher probes from `rng`; exact mode
/// uses 2 N p extra forward passes.
ad::Var stein_loss(const BoundModel& model, const Tensor& observations, double sigma, DivergenceMode mode,
                   double h, std::size_t n_probes, Rng& rng);

/// Gradient-free evaluation of the same objective.
double stein_loss_value(const Model& model, const Tensor& observations, double sigma, DivergenceMode mode,
                        double h, std::size_t n_probes, Rng& rng);

/// Supervised MSE pretraining on `corpus`; sequence k of the corpus is used
/// once, at step k / batch_size. Aborts with NumericalError on a non-finite loss.
Model pretrain(Model model, const PretrainCorpus& corpus, const PretrainConfig& cfg, TrainReport* report = nullptr);

/// Attaches fresh rank-r adapters and trains only them on the Stein loss.
Model finetune(const Model& pretrained, const Tensor& observations, const FinetuneConfig& cfg,
               TrainReport* report = nullptr);

/// Trains every parameter of `fresh` on the Stein loss.
Model train_from_scratch(Model fresh, const Tensor& observations, const FinetuneConfig& cfg,
                         TrainReport* report = nullptr);

}  // namespace ebt
