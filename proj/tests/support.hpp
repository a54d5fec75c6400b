#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "ebt/autodiff/adam.hpp"
#include "ebt/autodiff/tape.hpp"
#include "ebt/model/transformer.hpp"
#include "ebt/train/train.hpp"

namespace ebt::testing {

using LossFn = std::function<ad::Var(ad::Tape&, const ad::ParamMap&)>;

/// Builds a tape with every entry of `params` registered, evaluates loss.
inline double eval_loss(const LossFn& fn, const ad::ParamMap& params) {
  ad::Tape tape;
  return fn(tape, params).value()[0];
}

inline ad::Gradients tape_grads(const LossFn& fn, const ad::ParamMap& params) {
  ad::Tape tape;
  return tape.backward(fn(tape, params));
}

/// Central-difference gradient of every parameter entry.
inline ad::Gradients fd_grads(const LossFn& fn, const ad::ParamMap& params, double h) {
  ad::Gradients out;
  ad::ParamMap p = params;
  for (auto& [name, t] : p) {
    Tensor g(t.shape());
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double orig = t[j];
      t[j] = orig + h;
      const double up = eval_loss(fn, p);
      t[j] = orig - h;
      const double down = eval_loss(fn, p);
      t[j] = orig;
      g[j] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

/// max over tensors of ||a - b|| / max(||b||, floor)
inline double relative_error(const ad::Gradients& a, const ad::Gradients& b, double floor = 1e-8) {
  double worst = 0.0;
  for (const auto& [name, tb] : b) {
    const Tensor& ta = a.at(name);
    double diff = 0.0, ref = 0.0;
    for (std::size_t j = 0; j < tb.size(); ++j) {
      diff += (ta[j] - tb[j]) * (ta[j] - tb[j]);
      ref += tb[j] * tb[j];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(ref), floor));
  }
  return worst;
}

inline ModelConfig small_config(std::size_t p = 1) {
  ModelConfig c;
  c.p = p;
  c.p_emb = 8;
  c.n_heads = 2;
  c.emb_depth = 1;
  c.emb_width = 6;
  c.oh_depth = 2;
  c.oh_width = 5;
  return c;
}

/// T_i(d) = a * d_i tokenwise: embed to [d, -d], identity attention block
/// (zero mixing), affine head.
inline Model linear_model(std::size_t p, double a) {
  ModelConfig c;
  c.p = p;
  c.p_emb = 2 * p;
  c.n_heads = 1;
  c.emb_depth = 0;
  c.oh_depth = 0;
  c.r_clip = 1e6;
  Rng rng(1);
  Model m = make_model(c, rng);
  Tensor& we = m.params.at("emb.0.weight");
  we.fill(0.0);
  for (std::size_t k = 0; k < p; ++k) {
    we(k, k) = 1.0;
    we(k, p + k) = -1.0;
  }
  m.params.at("emb.0.bias").fill(0.0);
  m.params.at("enc.0.wo").fill(0.0);
  Tensor& wh = m.params.at("head.0.weight");
  wh.fill(0.0);
  for (std::size_t k = 0; k < p; ++k) {
    wh(k, k) = a / 2.0;
    wh(p + k, k) = -a / 2.0;
  }
  m.params.at("head.0.bias").fill(0.0);
  return m;
}

/// Both sides of the Stein identity over a labelled sample that is fed to the
/// model in consecutive contexts of `chunk` tokens.
struct SteinCheck {
  double stein = 0.0;          ///< mean Stein objective
  double mean_theta_sq = 0.0;  ///< mean ||theta||^2
  double mse = 0.0;            ///< mean ||T - theta||^2

  double relative_gap() const { return std::abs(stein + mean_theta_sq - mse) / mse; }
};

inline SteinCheck stein_check(const Model& model, const Dataset& data, std::size_t chunk, DivergenceMode mode,
                              double sigma, std::uint64_t seed = 0) {
  const std::size_t n = data.size(), p = data.observations.cols();
  Rng rng(seed);
  SteinCheck out;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    Tensor obs({hi - lo, p});
    for (std::size_t j = 0; j < obs.size(); ++j) obs[j] = data.observations[lo * p + j];
    const double w = double(hi - lo) / double(n);
    out.stein += w * stein_loss_value(model, obs, sigma, mode, 1e-4, 1, rng);
    const Tensor t = predict(model, obs);
    for (std::size_t j = 0; j < obs.size(); ++j) {
      const double theta = data.thetas[lo * p + j];
      out.mean_theta_sq += theta * theta / double(n);
      out.mse += (t[j] - theta) * (t[j] - theta) / double(n);
    }
  }
  return out;
}

}  // namespace ebt::testing
