#pragma once

#include <map>
#include <string>
#include <vector>

#include "ebt/autodiff/adam.hpp"
#include "ebt/autodiff/tape.hpp"
#include "ebt/data/rng.hpp"
#include "ebt/model/config.hpp"

namespace ebt {

using ParamMap = ad::ParamMap;

/// Low-rank update of one weight: effective W = W0 + B·A with B (d_out x r)
/// and A (r x d_in). Weights are stored for row-vector inputs (X·W, shape
/// d_in x d_out), so the update is applied as (X·Aᵀ)·Bᵀ.
struct LoraAdapter {
  std::string target;
  Tensor b;  ///< d_out x r
  Tensor a;  ///< r x d_in

  std::size_t rank() const { return a.rows(); }
};

using AdapterSet = std::map<std::string, LoraAdapter>;

struct Model {
  ModelConfig config;
  ParamMap params;
  AdapterSet adapters;
};

/// Weight/bias naming: emb.{l}.weight, norm.gain, enc.{b}.head.{h}.wq,
/// enc.{b}.wo, enc.{b}.norm.offset, head.{l}.bias, ...
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& config);

/// Linear layers and attention projections use U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// norm gains start at 1, offsets at 0.
ParamMap init_params(const ModelConfig& config, Rng& rng);
Model make_model(const ModelConfig& config, Rng& rng);

/// Throws ShapeError/NumericalError when params do not match the layout.
void check_params(const ModelConfig& config, const ParamMap& params);

/// Expands module groups ("embedding", "output_head", "attention") or
/// explicit weight names into weight names.
std::vector<std::string> resolve_targets(const ModelConfig& config, const std::vector<std::string>& modules);

/// Zero-initialised B, A ~ N(0, 0.02^2). Per-layer rank is min(rank, d_in, d_out).
AdapterSet attach_lora(const ModelConfig& config, const std::vector<std::string>& modules, std::size_t rank,
                       Rng& rng);
void check_adapters(const ModelConfig& config, const ParamMap& params, const AdapterSet& adapters);

/// Folds every adapter into its base weight.
ParamMap merge_adapters(const ParamMap& params, const AdapterSet& adapters);

/// Which tensors a tape sees as trainable.
enum class Trainable { none, all, adapters };

/// Model parameters registered on a tape. Trainable tensors keep their
/// names (`lora/<target>/A|B` for adapters) in the gradient map.
class BoundModel {
 public:
  BoundModel(ad::Tape& tape, const Model& model, Trainable trainable);

  ad::Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return *config_; }
  ad::Var param(const std::string& name) const;
  /// x·W for a named weight, plus the low-rank path when adapted.
  ad::Var apply_weight(ad::Var x, const std::string& weight) const;
  /// x·W + b for layer prefix `<name>` (weights `<name>.weight`, `<name>.bias`).
  ad::Var linear(ad::Var x, const std::string& layer) const;

 private:
  struct AdapterVars {
    ad::Var a, b;
  };
  ad::Tape* tape_;
  const ModelConfig* config_;
  std::map<std::string, ad::Var> vars_;
  std::map<std::string, AdapterVars> adapters_;
};

/// Captured intermediate activations for inspection.
struct ForwardTrace {
  Tensor clipped_embeddings;
  std::vector<Tensor> attention_weights;  ///< block-major, then head
};

ad::Var embed(const BoundModel& m, ad::Var sequence);
ad::Var center_norm(ad::Var x, ad::Var gain, ad::Var offset);
ad::Var radical_clip(ad::Var x, double r_clip);
/// Concatenated single-head attention outputs softmax(QKᵀ/sqrt(p_k))V for one block.
ad::Var attention_forward(const BoundModel& m, ad::Var x, std::size_t block, ForwardTrace* trace = nullptr);
/// Attention, mixing projection, residual and closing CenterNorm.
ad::Var encoder_block(const BoundModel& m, ad::Var x, std::size_t block, ForwardTrace* trace = nullptr);
ad::Var output_head(const BoundModel& m, ad::Var x);
/// Full estimator: N x p observations -> N x p estimates.
ad::Var forward(const BoundModel& m, ad::Var sequence, ForwardTrace* trace = nullptr);

/// Gradient-free evaluation on one sequence (the whole input is the context).
Tensor predict(const Model& model, const Tensor& sequence, ForwardTrace* trace = nullptr);

/// Per-token diagonal-block Jacobian trace sum_k dT_i^(k)/dd_i^(k) by central
/// differences; 2·N·p extra forward passes.
std::vector<double> divergence_exact(const Model& model, const Tensor& sequence, double h = 1e-4);

/// Rademacher-probe estimate of the same per-token traces.
std::vector<double> divergence_hutchinson(const Model& model, const Tensor& sequence, double h,
                                          std::size_t n_probes, Rng& rng);

struct ParamCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_module;  ///< embedding, norm, attention, output_head
  std::size_t trainable_lora = 0;                ///< sum over targets of r_l (d_in + d_out)
};

ParamCount param_count(const ModelConfig& config, const std::vector<std::string>& lora_modules = {},
                       std::size_t lora_rank = 0);

}  // namespace ebt
