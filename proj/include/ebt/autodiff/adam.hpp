#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ebt/autodiff/tape.hpp"
#include "ebt/autodiff/tensor.hpp"

namespace ebt::ad {

using ParamMap = std::map<std::string, Tensor>;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  ParamMap m;
  ParamMap v;
};

/// One bias-corrected Adam update. Only parameters present in `grads` move;
/// moment buffers are created on first sight of a name.
void adam_step(ParamMap& params, const Gradients& grads, AdamState& state);

/// Euclidean norm over every gradient entry.
double global_norm(const Gradients& grads);

/// Rescales all gradients so their global norm is at most max_norm.
/// Returns the pre-clipping norm.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace ebt::ad
