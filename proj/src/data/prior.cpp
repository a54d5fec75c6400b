#include "ebt/data/prior.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "ebt/errors.hpp"

namespace ebt {
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string join(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += num(xs[i]);
  }
  return out;
}

void check_simplex(const std::vector<double>& w, const char* what) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + ": weights must be nonnegative");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError(std::string(what) + ": weights sum to " + num(total) + ", expected 1");
  }
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::size_t pick(const std::vector<double>& weights, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
    if (u < weights[j]) return j;
    u -= weights[j];
  }
  return weights.size() - 1;
}

double sample_scalar(const Prior& prior, Rng& rng);

double sample_scalar_impl(const GaussianMixture& g, Rng& rng) {
  const std::size_t j = pick(g.weights, rng);
  return g.means[j] + std::sqrt(g.variances[j]) * rng.normal();
}

double sample_scalar(const Prior& prior, Rng& rng) {
  return std::visit(
      overloaded{
          [&](const GaussianMixture& g) { return sample_scalar_impl(g, rng); },
          [&](const Exponential& e) { return -e.mean * std::log(rng.uniform_open()); },
          [&](const Uniform& u) { return rng.uniform(u.lo, u.hi); },
          [&](const PointMassSet& s) { return s.atoms[pick(s.weights, rng)]; },
          [&](const NeuralPrior& n) { return NeuralNetBank(n).sample(rng); },
          [&](const DirichletProcess&) -> double {
            throw ContractError("a Dirichlet process has no i.i.d. scalar draw; use sample_prior");
          },
      },
      prior.kind);
}

std::vector<double> sample_crp(const DirichletProcess& dp, std::size_t n, Rng& rng) {
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t j = 1; j <= n; ++j) {
    const double fresh = dp.alpha / (dp.alpha + static_cast<double>(j - 1));
    if (j == 1 || rng.uniform() < fresh) {
      out.push_back(sample_prior(*dp.base, 1, rng)[0]);
    } else {
      out.push_back(out[rng.index(j - 1)]);
    }
  }
  return out;
}

}  // namespace

namespace {
Prior checked(Prior p) {
  validate(p);
  return p;
}
}  // namespace

Prior Prior::gaussian_mixture(std::vector<double> weights, std::vector<double> means,
                              std::vector<double> variances) {
  return checked(Prior{GaussianMixture{std::move(weights), std::move(means), std::move(variances)}});
}

Prior Prior::exponential(double mean) { return checked(Prior{Exponential{mean}}); }

Prior Prior::dirichlet_process(double alpha, Prior base) {
  return checked(Prior{DirichletProcess{alpha, std::make_shared<const Prior>(std::move(base))}});
}

Prior Prior::neural(std::uint64_t seed, std::size_t n_nets, std::size_t input_dim, std::size_t hidden) {
  return checked(Prior{NeuralPrior{seed, n_nets, input_dim, hidden}});
}

Prior Prior::uniform(double lo, double hi) { return checked(Prior{Uniform{lo, hi}}); }

Prior Prior::point_masses(std::vector<double> atoms, std::vector<double> weights) {
  if (weights.empty() && !atoms.empty()) weights.assign(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
  return checked(Prior{PointMassSet{std::move(atoms), std::move(weights)}});
}

void validate(const Prior& prior) {
  std::visit(overloaded{
                 [](const GaussianMixture& g) {
                   if (g.weights.empty()) throw ConfigError("gaussian mixture: no components");
                   if (g.means.size() != g.weights.size() || g.variances.size() != g.weights.size()) {
                     throw ConfigError("gaussian mixture: weights/means/variances lengths differ");
                   }
                   check_simplex(g.weights, "gaussian mixture");
                   for (double v : g.variances)
                     if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("gaussian mixture: variances must be > 0");
                   for (double m : g.means)
                     if (!std::isfinite(m)) throw ConfigError("gaussian mixture: non-finite mean");
                 },
                 [](const Exponential& e) {
                   if (!(e.mean > 0.0) || !std::isfinite(e.mean)) throw ConfigError("exponential: mean must be > 0");
                 },
                 [](const Uniform& u) {
                   if (!(u.lo < u.hi) || !std::isfinite(u.lo) || !std::isfinite(u.hi)) {
                     throw ConfigError("uniform: require lo < hi");
                   }
                 },
                 [](const PointMassSet& s) {
                   if (s.atoms.empty()) throw ConfigError("point masses: no atoms");
                   if (s.weights.size() != s.atoms.size()) throw ConfigError("point masses: weights/atoms lengths differ");
                   check_simplex(s.weights, "point masses");
                   for (double a : s.atoms)
                     if (!std::isfinite(a)) throw ConfigError("point masses: non-finite atom");
                 },
                 [](const NeuralPrior& n) {
                   if (n.n_nets == 0 || n.input_dim == 0 || n.hidden == 0) {
                     throw ConfigError("neural prior: sizes must be positive");
                   }
                 },
                 [](const DirichletProcess& dp) {
                   if (!(dp.alpha > 0.0) || !std::isfinite(dp.alpha)) throw ConfigError("dirichlet process: alpha must be > 0");
                   if (!dp.base) throw ConfigError("dirichlet process: missing base distribution");
                   if (dp.base->as<DirichletProcess>()) throw ConfigError("dirichlet process: nested base unsupported");
                   validate(*dp.base);
                 },
             },
             prior.kind);
}

std::string describe(const Prior& prior) {
  return std::visit(overloaded{
                        [](const GaussianMixture& g) {
                          return "gmm(w=" + join(g.weights) + ";m=" + join(g.means) + ";v=" + join(g.variances) + ")";
                        },
                        [](const Exponential& e) { return "exp(mean=" + num(e.mean) + ")"; },
                        [](const Uniform& u) { return "unif(" + num(u.lo) + "," + num(u.hi) + ")"; },
                        [](const PointMassSet& s) {
                          if (s.atoms.size() > 8) return "atoms(n=" + std::to_string(s.atoms.size()) + ")";
                          return "atoms(" + join(s.atoms) + ";w=" + join(s.weights) + ")";
                        },
                        [](const NeuralPrior& n) {
                          return "neural(seed=" + std::to_string(n.seed) + ";nets=" + std::to_string(n.n_nets) + ")";
                        },
                        [](const DirichletProcess& dp) {
                          return "dp(alpha=" + num(dp.alpha) + ";base=" + describe(*dp.base) + ")";
                        },
                    },
                    prior.kind);
}

std::optional<double> prior_mean(const Prior& prior) {
  return std::visit(overloaded{
                        [](const GaussianMixture& g) -> std::optional<double> {
                          return std::inner_product(g.weights.begin(), g.weights.end(), g.means.begin(), 0.0);
                        },
                        [](const Exponential& e) -> std::optional<double> { return e.mean; },
                        [](const Uniform& u) -> std::optional<double> { return 0.5 * (u.lo + u.hi); },
                        [](const PointMassSet& s) -> std::optional<double> {
                          return std::inner_product(s.weights.begin(), s.weights.end(), s.atoms.begin(), 0.0);
                        },
                        [](const auto&) -> std::optional<double> { return std::nullopt; },
                    },
                    prior.kind);
}

std::optional<double> prior_variance(const Prior& prior) {
  return std::visit(overloaded{
                        [](const GaussianMixture& g) -> std::optional<double> {
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < g.weights.size(); ++j) {
                            m1 += g.weights[j] * g.means[j];
                            m2 += g.weights[j] * (g.variances[j] + g.means[j] * g.means[j]);
                          }
                          return m2 - m1 * m1;
                        },
                        [](const Exponential& e) -> std::optional<double> { return e.mean * e.mean; },
                        [](const Uniform& u) -> std::optional<double> { return (u.hi - u.lo) * (u.hi - u.lo) / 12.0; },
                        [](const PointMassSet& s) -> std::optional<double> {
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < s.atoms.size(); ++j) {
                            m1 += s.weights[j] * s.atoms[j];
                            m2 += s.weights[j] * s.atoms[j] * s.atoms[j];
                          }
                          return m2 - m1 * m1;
                        },
                        [](const auto&) -> std::optional<double> { return std::nullopt; },
                    },
                    prior.kind);
}

Tensor sample_prior(const Prior& prior, std::size_t n, Rng& rng, std::size_t p) {
  if (n == 0 || p == 0) throw ContractError("sample_prior: n and p must be positive");
  if (const auto* dp = prior.as<DirichletProcess>()) {
    if (p != 1) throw ConfigError("dirichlet process prior supports p = 1 only");
    return Tensor({n, 1}, sample_crp(*dp, n, rng));
  }
  if (const auto* np = prior.as<NeuralPrior>()) {
    if (p != 1) throw ConfigError("neural prior supports p = 1 only");
    const NeuralNetBank bank(*np);
    Tensor out = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = bank.sample(rng);
    return out;
  }
  Tensor out = Tensor::matrix(n, p);
  for (auto& v : out.data()) v = sample_scalar(prior, rng);
  return out;
}

GaussianMixture random_pretrain_prior(Rng& rng) {
  GaussianMixture g;
  g.weights.assign(3, 1.0 / 3.0);
  g.variances.assign(3, 1.0);
  for (int j = 0; j < 3; ++j) g.means.push_back(rng.uniform(0.0, 5.0));
  return g;
}

Prior realize(const Prior& prior, std::size_t draws, Rng& rng) {
  const auto* dp = prior.as<DirichletProcess>();
  if (!dp) return prior;
  const std::vector<double> seq = sample_crp(*dp, draws, rng);
  // Collapse repeats in first-seen order so the result is deterministic.
  std::vector<double> atoms, counts;
  for (double v : seq) {
    std::size_t j = 0;
    while (j < atoms.size() && atoms[j] != v) ++j;
    if (j == atoms.size()) {
      atoms.push_back(v);
      counts.push_back(0.0);
    }
    counts[j] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(draws);
  // Renormalise exactly onto the simplex.
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  for (auto& c : counts) c /= total;
  return Prior::point_masses(std::move(atoms), std::move(counts));
}

}  // namespace ebt
