#include "ebt/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ebt/errors.hpp"
#include "ebt/oracle/normal.hpp"

namespace ebt {
namespace {

constexpr double kLogTiny = -690.7755278982137;  // log(1e-300)

double log_sum_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// log(Phi(b) - Phi(a)) for a < b without cancellation in either tail.
double log_normal_interval(double a, double b) {
  if (a > 0.0) {
    const double la = norm_log_cdf(-a), lb = norm_log_cdf(-b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if (b < 0.0) {
    const double la = norm_log_cdf(a), lb = norm_log_cdf(b);
    return lb + std::log1p(-std::exp(la - lb));
  }
  return std::log(norm_cdf(b) - norm_cdf(a));
}

bool has_closed_form(const Prior& prior) {
  return prior.as<GaussianMixture>() || prior.as<Exponential>() || prior.as<Uniform>() || prior.as<PointMassSet>();
}

/// Largest-remainder split of `count` strata across mixture weights.
std::vector<std::size_t> allocate(const std::vector<double>& weights, std::size_t count) {
  std::vector<std::size_t> k(weights.size());
  double cum = 0.0;
  std::size_t prev = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    cum += weights[j];
    const auto upto = static_cast<std::size_t>(std::llround(cum * static_cast<double>(count)));
    k[j] = std::max<std::size_t>(upto > prev ? upto - prev : 0, weights[j] > 0.0 ? 1 : 0);
    prev = std::max(prev, upto);
  }
  return k;
}

}  // namespace

AtomSet compress_atoms(std::vector<double> atoms, std::vector<double> weights, double resolution) {
  if (atoms.empty() || atoms.size() != weights.size()) throw ContractError("compress_atoms: bad atom/weight arrays");
  std::vector<std::size_t> order(atoms.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });
  AtomSet out;
  double total = 0.0;
  double bin_w = 0.0, bin_wx = 0.0;
  double bin_key = 0.0;
  bool open = false;
  // Exact-duplicate merging keeps the atom value itself rather than a rounded mean.
  auto flush = [&] {
    if (open && bin_w > 0.0) {
      out.atoms.push_back(resolution > 0.0 ? bin_wx / bin_w : bin_key);
      out.weights.push_back(bin_w);
    }
  };
  for (std::size_t idx : order) {
    const double x = atoms[idx], w = weights[idx];
    if (!std::isfinite(x) || !(w >= 0.0)) throw NumericalError("compress_atoms: non-finite atom or negative weight");
    const double key = resolution > 0.0 ? std::floor(x / resolution) : x;
    if (!open || key != bin_key) {
      flush();
      bin_key = key;
      bin_w = 0.0;
      bin_wx = 0.0;
      open = true;
    }
    bin_w += w;
    bin_wx += w * x;
    total += w;
  }
  flush();
  if (!(total > 0.0)) throw ContractError("compress_atoms: total weight is zero");
  for (auto& w : out.weights) w /= total;
  return out;
}

AtomSet draw_prior_atoms(const Prior& prior, std::size_t count, std::uint64_t seed) {
  validate(prior);
  if (count < kMinAtoms) {
    throw ContractError("Monte Carlo oracle needs at least " + std::to_string(kMinAtoms) + " atoms");
  }
  Rng rng(seed);
  std::vector<double> atoms, weights;
  atoms.reserve(count);
  weights.reserve(count);
  // One jittered draw per stratum of a proposal q; weights g/q are
  // renormalised so the group keeps exactly `mass`.
  auto stratified = [&](std::size_t k, double mass, auto&& quantile, auto&& log_ratio) {
    const std::size_t first = atoms.size();
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double u = (static_cast<double>(i) + rng.uniform_open()) / static_cast<double>(k);
      const double x = quantile(u);
      atoms.push_back(x);
      weights.push_back(std::exp(log_ratio(x)));
      total += weights.back();
    }
    for (std::size_t i = first; i < atoms.size(); ++i) weights[i] *= mass / total;
  };
  // Proposals are twice as wide as the prior so the atoms reach the tail
  // quantiles that dominate the posterior for extreme observations.
  constexpr double kWiden = 2.0;
  if (const auto* g = prior.as<GaussianMixture>()) {
    const auto k = allocate(g->weights, count);
    for (std::size_t j = 0; j < k.size(); ++j) {
      const double m = g->means[j], s = std::sqrt(g->variances[j]);
      stratified(
          k[j], g->weights[j], [&](double u) { return m + kWiden * s * norm_quantile(u); },
          [&](double x) {
            const double z = (x - m) / s;
            return -0.5 * z * z * (1.0 - 1.0 / (kWiden * kWiden));
          });
    }
  } else if (const auto* e = prior.as<Exponential>()) {
    const double wide = kWiden * e->mean;
    stratified(
        count, 1.0, [&](double u) { return -wide * std::log1p(-u); },
        [&](double x) { return -x / e->mean + x / wide; });
  } else if (const auto* un = prior.as<Uniform>()) {
    stratified(
        count, 1.0, [&](double u) { return un->lo + (un->hi - un->lo) * u; }, [](double) { return 0.0; });
  } else if (const auto* pm = prior.as<PointMassSet>()) {
    atoms = pm->atoms;
    weights = pm->weights;
  } else if (const auto* np = prior.as<NeuralPrior>()) {
    NeuralNetBank bank(*np);
    for (std::size_t i = 0; i < count; ++i) {
      atoms.push_back(bank.sample(rng));
      weights.push_back(1.0);
    }
  } else {
    const Prior frozen = realize(prior, count, rng);
    const auto& pts = *frozen.as<PointMassSet>();
    atoms = pts.atoms;
    weights = pts.weights;
  }
  return AtomSet{std::move(atoms), std::move(weights)};
}

MarginalDensity::MarginalDensity(Prior prior, double sigma, OracleBackend backend, AtomSet atoms)
    : prior_(std::move(prior)), sigma_(sigma), backend_(backend), atoms_(std::move(atoms)) {
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw ConfigError("oracle: sigma must be > 0");
  double c = 0.0;
  atom_cdf_.reserve(atoms_.weights.size());
  for (double w : atoms_.weights) atom_cdf_.push_back(c += w);
}

MarginalDensity MarginalDensity::closed_form(const Prior& prior, double sigma) {
  validate(prior);
  if (!has_closed_form(prior)) {
    throw ContractError("no closed-form marginal for " + describe(prior) + "; use the Monte Carlo backend");
  }
  AtomSet atoms;
  if (const auto* pm = prior.as<PointMassSet>()) atoms = compress_atoms(pm->atoms, pm->weights, 0.0);
  return MarginalDensity(prior, sigma, OracleBackend::closed_form, std::move(atoms));
}

MarginalDensity MarginalDensity::monte_carlo(const Prior& prior, double sigma, std::size_t atom_count,
                                             std::uint64_t seed) {
  AtomSet raw = draw_prior_atoms(prior, atom_count, seed);
  return MarginalDensity(prior, sigma, OracleBackend::monte_carlo,
                         compress_atoms(std::move(raw.atoms), std::move(raw.weights), 1e-3 * sigma));
}

MarginalDensity MarginalDensity::from_atoms(AtomSet atoms, double sigma) {
  AtomSet clean = compress_atoms(std::move(atoms.atoms), std::move(atoms.weights), 0.0);
  Prior prior = Prior::point_masses(clean.atoms, clean.weights);
  return MarginalDensity(std::move(prior), sigma, OracleBackend::monte_carlo, std::move(clean));
}

MarginalDensity MarginalDensity::best_available(const Prior& prior, double sigma, std::size_t atom_count,
                                                std::uint64_t seed) {
  return has_closed_form(prior) ? closed_form(prior, sigma) : monte_carlo(prior, sigma, atom_count, seed);
}

double MarginalDensity::atom_log_density(double d) const {
  double m = -INFINITY;
  for (double a : atoms_.atoms) m = std::max(m, norm_log_pdf((d - a) / sigma_));
  double s = 0.0;
  for (std::size_t i = 0; i < atoms_.atoms.size(); ++i) {
    s += atoms_.weights[i] * std::exp(norm_log_pdf((d - atoms_.atoms[i]) / sigma_) - m);
  }
  return m + std::log(s) - std::log(sigma_);
}

double MarginalDensity::atom_posterior_mean(double d) const {
  double m = -INFINITY;
  for (double a : atoms_.atoms) m = std::max(m, norm_log_pdf((d - a) / sigma_));
  double s = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < atoms_.atoms.size(); ++i) {
    const double w = atoms_.weights[i] * std::exp(norm_log_pdf((d - atoms_.atoms[i]) / sigma_) - m);
    s += w;
    sx += w * atoms_.atoms[i];
  }
  return sx / s;
}

double MarginalDensity::log_density(double d) const {
  if (!std::isfinite(d)) throw NumericalError("marginal density: non-finite observation");
  const double s2 = sigma_ * sigma_;
  if (!atoms_.atoms.empty()) return atom_log_density(d);
  if (const auto* g = prior_.as<GaussianMixture>()) {
    double acc = -INFINITY;
    for (std::size_t j = 0; j < g->weights.size(); ++j) {
      if (g->weights[j] == 0.0) continue;
      const double sd = std::sqrt(g->variances[j] + s2);
      acc = log_sum_exp(acc, std::log(g->weights[j]) + norm_log_pdf((d - g->means[j]) / sd) - std::log(sd));
    }
    return acc;
  }
  if (const auto* e = prior_.as<Exponential>()) {
    const double lam = 1.0 / e->mean;
    return std::log(lam) - lam * d + 0.5 * lam * lam * s2 + norm_log_cdf(d / sigma_ - lam * sigma_);
  }
  const auto& u = *prior_.as<Uniform>();
  return log_normal_interval((u.lo - d) / sigma_, (u.hi - d) / sigma_) - std::log(u.hi - u.lo);
}

double MarginalDensity::density(double d) const { return std::exp(log_density(d)); }

double MarginalDensity::posterior_mean(double d) const {
  if (!std::isfinite(d)) throw NumericalError("posterior mean: non-finite observation");
  const double s2 = sigma_ * sigma_;
  if (!atoms_.atoms.empty()) return atom_posterior_mean(d);
  if (const auto* g = prior_.as<GaussianMixture>()) {
    std::vector<double> logr(g->weights.size(), -INFINITY);
    double m = -INFINITY;
    for (std::size_t j = 0; j < g->weights.size(); ++j) {
      if (g->weights[j] == 0.0) continue;
      const double sd = std::sqrt(g->variances[j] + s2);
      logr[j] = std::log(g->weights[j]) + norm_log_pdf((d - g->means[j]) / sd) - std::log(sd);
      m = std::max(m, logr[j]);
    }
    double z = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < g->weights.size(); ++j) {
      const double r = std::exp(logr[j] - m);
      const double v = g->variances[j];
      z += r;
      acc += r * (v * d + s2 * g->means[j]) / (v + s2);
    }
    return acc / z;
  }
  if (const auto* e = prior_.as<Exponential>()) {
    const double mu = d - s2 / e->mean;
    return mu + sigma_ * inverse_mills(mu / sigma_);
  }
  const auto& u = *prior_.as<Uniform>();
  const double a = (u.lo - d) / sigma_, b = (u.hi - d) / sigma_;
  const double logz = log_normal_interval(a, b);
  const double t = std::exp(norm_log_pdf(a) - logz) - std::exp(norm_log_pdf(b) - logz);
  return std::clamp(d + sigma_ * t, u.lo, u.hi);
}

double MarginalDensity::sample(Rng& rng) const {
  double theta;
  if (!atoms_.atoms.empty()) {
    const double u = rng.uniform() * atom_cdf_.back();
    auto it = std::upper_bound(atom_cdf_.begin(), atom_cdf_.end(), u);
    theta = atoms_.atoms[std::min<std::size_t>(it - atom_cdf_.begin(), atoms_.atoms.size() - 1)];
  } else {
    theta = sample_prior(prior_, 1, rng)[0];
  }
  return theta + sigma_ * rng.normal();
}

Oracle Oracle::closed_form(const Prior& prior, double sigma) {
  return Oracle(MarginalDensity::closed_form(prior, sigma));
}

Oracle Oracle::monte_carlo(const Prior& prior, double sigma, std::size_t atom_count, std::uint64_t seed) {
  return Oracle(MarginalDensity::monte_carlo(prior, sigma, atom_count, seed));
}

Oracle Oracle::best_available(const Prior& prior, double sigma, std::size_t atom_count, std::uint64_t seed) {
  return Oracle(MarginalDensity::best_available(prior, sigma, atom_count, seed));
}

double Oracle::posterior_mean(double d) const { return marginal_.posterior_mean(d); }

Tensor Oracle::posterior_mean(const Tensor& observations) const {
  Tensor out(observations.shape());
  for (std::size_t j = 0; j < observations.size(); ++j) out[j] = marginal_.posterior_mean(observations[j]);
  return out;
}

double tweedie_posterior_mean(const MarginalDensity& marginal, double d, double h) {
  if (marginal.log_density(d) < kLogTiny) {
    throw NumericalError("tweedie: marginal density below 1e-300 at d = " + std::to_string(d) + " (out of support)");
  }
  const double score = (marginal.log_density(d + h) - marginal.log_density(d - h)) / (2.0 * h);
  return d + marginal.sigma() * marginal.sigma() * score;
}

double estimation_error(const Tensor& estimates, const Tensor& oracle_estimates) {
  if (estimates.shape() != oracle_estimates.shape() || estimates.rank() != 2) {
    throw ShapeError("estimation_error: estimates " + shape_string(estimates.shape()) + " vs oracle " +
                     shape_string(oracle_estimates.shape()));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < estimates.size(); ++j) {
    const double diff = estimates[j] - oracle_estimates[j];
    s += diff * diff;
  }
  const double err = s / static_cast<double>(estimates.rows());
  if (!std::isfinite(err)) throw NumericalError("estimation_error: non-finite result");
  return err;
}

double estimation_error(const Estimator& estimator, const Oracle& oracle, const Dataset& test_set) {
  return estimation_error(estimator(test_set.observations), oracle.posterior_mean(test_set.observations));
}

namespace {

double hellinger_sq(const MarginalDensity& f, const MarginalDensity& g, std::size_t n, Rng& rng) {
  if (n < kMinAtoms) throw ContractError("hellinger_mc: need at least 10^4 samples");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = f.sample(rng);
    acc += std::exp(0.5 * (g.log_density(x) - f.log_density(x)));
  }
  return std::clamp(1.0 - acc / static_cast<double>(n), 0.0, 1.0);
}

}  // namespace

double hellinger_mc(const MarginalDensity& f, const MarginalDensity& g, std::size_t n_samples, Rng& rng) {
  return std::sqrt(hellinger_sq(f, g, n_samples, rng));
}

double hellinger_symmetric(const MarginalDensity& f, const MarginalDensity& g, std::size_t n_samples, Rng& rng) {
  Rng a = rng.child(1), b = rng.child(2);
  return std::sqrt(0.5 * (hellinger_sq(f, g, n_samples, a) + hellinger_sq(g, f, n_samples, b)));
}

double l2_mean_distance(const GaussianMixture& a, const GaussianMixture& b) {
  const std::size_t k = a.means.size();
  if (b.means.size() != k) throw ConfigError("l2_mean_distance: component counts differ");
  for (std::size_t j = 0; j < k; ++j) {
    if (std::abs(a.weights[j] - a.weights[0]) > 1e-12 || std::abs(b.weights[j] - a.weights[0]) > 1e-12 ||
        std::abs(a.variances[j] - a.variances[0]) > 1e-12 || std::abs(b.variances[j] - a.variances[0]) > 1e-12) {
      throw ConfigError("l2_mean_distance: mixtures must share equal weights and variances");
    }
  }
  std::vector<double> ma = a.means, mb = b.means;
  std::sort(ma.begin(), ma.end());
  std::sort(mb.begin(), mb.end());
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += (ma[j] - mb[j]) * (ma[j] - mb[j]);
  return std::sqrt(s);
}

void store_oracle_atoms(Checkpoint& ckpt, const MarginalDensity& marginal) {
  const auto& at = marginal.atoms();
  if (at.atoms.empty()) throw ContractError("store_oracle_atoms: marginal has no atom representation");
  ckpt.tensors.insert_or_assign("oracle/atoms", Tensor::vector(at.atoms));
  ckpt.tensors.insert_or_assign("oracle/weights", Tensor::vector(at.weights));
  ckpt.tensors.insert_or_assign("oracle/sigma", Tensor::vector({marginal.sigma()}));
}

std::optional<MarginalDensity> load_oracle_atoms(const Checkpoint& ckpt) {
  auto a = ckpt.tensors.find("oracle/atoms");
  if (a == ckpt.tensors.end()) return std::nullopt;
  auto w = ckpt.tensors.find("oracle/weights");
  auto s = ckpt.tensors.find("oracle/sigma");
  if (w == ckpt.tensors.end() || s == ckpt.tensors.end() || w->second.size() != a->second.size()) {
    throw FormatError("checkpoint: incomplete oracle atom cache");
  }
  const auto av = a->second.data(), wv = w->second.data();
  return MarginalDensity::from_atoms(AtomSet{{av.begin(), av.end()}, {wv.begin(), wv.end()}}, s->second[0]);
}

}  // namespace ebt
