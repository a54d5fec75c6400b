#include <cmath>
#include <numbers>

#include "ebt/data/prior.hpp"
#include "ebt/errors.hpp"

namespace ebt {

double apply_activation(Activation act, double x) {
  switch (act) {
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::selu: {
      constexpr double lambda = 1.0507009873554804934193349852946;
      constexpr double alpha = 1.6732632423543772848170429916717;
      return lambda * (x > 0.0 ? x : alpha * std::expm1(x));
    }
    case Activation::celu:
      return x > 0.0 ? x : std::expm1(x);
    case Activation::silu:
      return x / (1.0 + std::exp(-x));
    case Activation::tanhshrink:
      return x - std::tanh(x);
  }
  throw ContractError("unknown activation");
}

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::gelu: return "GELU";
    case Activation::relu: return "ReLU";
    case Activation::selu: return "SELU";
    case Activation::celu: return "CELU";
    case Activation::silu: return "SiLU";
    case Activation::tanhshrink: return "TanhShrink";
  }
  return "?";
}

NeuralNetBank::NeuralNetBank(const NeuralPrior& spec) : spec_(spec) {
  validate(Prior{spec});
  Rng rng(derive_seed(spec.seed, {hash_label("neural-prior")}));
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  for (std::size_t k = 0; k < spec.n_nets; ++k) {
    Net net;
    net.act = static_cast<Activation>(rng.index(6));
    net.w1.resize(spec.hidden * spec.input_dim);
    net.b1.resize(spec.hidden);
    net.w2.resize(spec.hidden);
    for (auto& w : net.w1) w = rng.uniform(-in_bound, in_bound);
    for (auto& b : net.b1) b = rng.uniform(-in_bound, in_bound);
    for (auto& w : net.w2) w = rng.uniform(-hid_bound, hid_bound);
    net.b2 = rng.uniform(-hid_bound, hid_bound);
    nets_.push_back(std::move(net));
  }
}

double NeuralNetBank::evaluate(std::size_t k, const std::vector<double>& x) const {
  const Net& net = nets_.at(k);
  if (x.size() != spec_.input_dim) throw ShapeError("neural prior: input has wrong dimension");
  double out = net.b2;
  for (std::size_t h = 0; h < spec_.hidden; ++h) {
    double z = net.b1[h];
    for (std::size_t i = 0; i < spec_.input_dim; ++i) z += net.w1[h * spec_.input_dim + i] * x[i];
    out += net.w2[h] * apply_activation(net.act, z);
  }
  return 1.0 / (1.0 + std::exp(-out));
}

double NeuralNetBank::sample(Rng& rng) const {
  std::vector<double> x(spec_.input_dim);
  for (auto& v : x) v = rng.uniform();
  return evaluate(rng.index(nets_.size()), x);
}

}  // namespace ebt
