#include "ebt/autodiff/adam.hpp"

#include <cmath>

#include "ebt/errors.hpp"

namespace ebt::ad {

void adam_step(ParamMap& params, const Gradients& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam_step: gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) {
      throw ShapeError("adam_step: parameter " + name + " has shape " + shape_string(it->second.shape()) +
                       " but gradient has " + shape_string(g.shape()));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
    auto [vit, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != g.shape() || v.shape() != g.shape()) {
      throw ShapeError("adam_step: moment buffers for " + name + " do not match the gradient shape");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads)
      for (auto& v : g.data()) v *= s;
  }
  return norm;
}

}  // namespace ebt::ad
