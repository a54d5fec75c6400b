#include "ebt/train/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>

#include "ebt/autodiff/ops.hpp"
#include "ebt/errors.hpp"

namespace ebt {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ParamMap adapter_params(const AdapterSet& adapters) {
  ParamMap out;
  for (const auto& [name, ad] : adapters) {
    out.emplace("lora/" + name + "/A", ad.a);
    out.emplace("lora/" + name + "/B", ad.b);
  }
  return out;
}

void write_back(AdapterSet& adapters, const ParamMap& params) {
  for (auto& [name, ad] : adapters) {
    ad.a = params.at("lora/" + name + "/A");
    ad.b = params.at("lora/" + name + "/B");
  }
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = x(rows[i], k);
  return out;
}

void accumulate(ad::Gradients& total, const ad::Gradients& g) {
  for (const auto& [name, t] : g) {
    auto it = total.find(name);
    if (it == total.end()) {
      total.emplace(name, t);
    } else {
      for (std::size_t j = 0; j < t.size(); ++j) it->second[j] += t[j];
    }
  }
}

void scale_grads(ad::Gradients& g, double c) {
  for (auto& [name, t] : g)
    for (auto& v : t.data()) v *= c;
}

std::string finetune_echo(const FinetuneConfig& cfg) {
  std::ostringstream o;
  o << "epochs=" << cfg.epochs << " lora_rank=" << cfg.lora_rank << " targets=";
  for (std::size_t i = 0; i < cfg.target_modules.size(); ++i) o << (i ? "," : "") << cfg.target_modules[i];
  o << " divergence=" << divergence_mode_name(cfg.divergence) << " h=" << fmt_double(cfg.h)
    << " probes=" << cfg.n_probes << " lr=" << fmt_double(cfg.lr) << " sigma=" << fmt_double(cfg.sigma)
    << " clip=" << fmt_double(cfg.clip_norm) << " batch_tokens=" << cfg.batch_tokens << " seed=" << cfg.seed;
  return o.str();
}

/// Shared Stein-loss optimisation loop. `trainable` selects adapters or all params.
Model stein_train(Model model, const Tensor& observations, const FinetuneConfig& cfg, Trainable trainable,
                  const char* what, TrainReport* report) {
  cfg.validate();
  if (observations.rank() != 2 || observations.cols() != model.config.p || observations.rows() == 0) {
    throw ShapeError(std::string(what) + ": observations " + shape_string(observations.shape()) +
                     " do not match model dimension p = " + std::to_string(model.config.p));
  }
  if (!observations.all_finite()) throw NumericalError(std::string(what) + ": non-finite observations");
  const auto start = Clock::now();
  Rng rng(derive_seed(cfg.seed, {hash_label(what)}));
  Rng order_rng = rng.child(1), probe_rng = rng.child(2);
  const std::size_t n = observations.rows();
  const std::size_t batch = cfg.effective_batch(n);
  ad::AdamState adam;
  adam.lr = cfg.lr;
  TrainReport local;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[order_rng.index(i + 1)]);
    }
    for (std::size_t lo = 0; lo < n; lo += batch, ++step) {
      const std::size_t hi = std::min(n, lo + batch);
      const Tensor chunk = batch < n ? gather_rows(observations, std::span(idx).subspan(lo, hi - lo)) : observations;
      double loss_value;
      ad::Gradients grads;
      try {
        ad::Tape tape;
        BoundModel bound(tape, model, trainable);
        ad::Var loss = stein_loss(bound, chunk, cfg.sigma, cfg.divergence, cfg.h, cfg.n_probes, probe_rng);
        loss_value = loss.value()[0];
        grads = tape.backward(loss);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(what) + ": non-finite loss at step " + std::to_string(step) +
                             " (lr=" + fmt_double(cfg.lr) + "): " + e.what());
      }
      if (!std::isfinite(loss_value)) {
        throw NumericalError(std::string(what) + ": non-finite loss at step " + std::to_string(step) +
                             " (lr=" + fmt_double(cfg.lr) + ")");
      }
      if (cfg.clip_norm > 0.0) ad::clip_global_norm(grads, cfg.clip_norm);
      if (trainable == Trainable::adapters) {
        ParamMap p = adapter_params(model.adapters);
        ad::adam_step(p, grads, adam);
        write_back(model.adapters, p);
      } else {
        ad::adam_step(model.params, grads, adam);
      }
      local.loss.push_back(loss_value);
      local.wall_ms.push_back(ms_since(start));
    }
  }
  if (report) {
    local.wall_seconds = ms_since(start) / 1000.0;
    if (trainable == Trainable::adapters) {
      for (const auto& [name, ad] : model.adapters) local.trainable_params += ad.a.size() + ad.b.size();
      local.checksum = params_checksum(adapter_params(model.adapters));
    } else {
      for (const auto& [name, t] : model.params) local.trainable_params += t.size();
      local.checksum = params_checksum(model.params);
    }
    local.config_echo = finetune_echo(cfg);
    *report = std::move(local);
  }
  return model;
}

}  // namespace

const char* divergence_mode_name(DivergenceMode mode) {
  return mode == DivergenceMode::exact ? "exact" : "hutchinson";
}

DivergenceMode parse_divergence_mode(const std::string& name) {
  if (name == "exact") return DivergenceMode::exact;
  if (name == "hutchinson") return DivergenceMode::hutchinson;
  throw ConfigError("unknown divergence mode '" + name + "' (expected exact or hutchinson)");
}

void PretrainConfig::validate() const {
  if (batch_size == 0 || iterations == 0 || seq_len == 0) {
    throw ConfigError("pretrain: batch_size, iterations and seq_len must be positive");
  }
  if (!(lr > 0.0)) throw ConfigError("pretrain: learning rate must be positive");
  if (clip_norm < 0.0) throw ConfigError("pretrain: clip_norm must be >= 0");
}

void FinetuneConfig::validate() const {
  if (lora_rank == 0) throw ConfigError("finetune: lora_rank must be >= 1");
  if (target_modules.empty()) throw ConfigError("finetune: empty LoRA target set");
  if (!(sigma > 0.0)) throw ConfigError("finetune: sigma must be > 0");
  if (!(lr > 0.0)) throw ConfigError("finetune: learning rate must be positive");
  if (!(h > 0.0)) throw ConfigError("finetune: divergence step h must be > 0");
  if (n_probes == 0) throw ConfigError("finetune: n_probes must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("finetune: clip_norm must be >= 0");
}

std::size_t FinetuneConfig::effective_batch(std::size_t n) const {
  if (batch_tokens > 0) return std::min(batch_tokens, n);
  return n <= 1024 ? n : 256;
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "step,loss,wall_ms\n";
  char buf[96];
  for (std::size_t i = 0; i < report.loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.3f\n", i, report.loss[i], report.wall_ms[i]);
    out << buf;
  }
}

std::string params_checksum(const ParamMap& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (std::uint64_t d : t.shape()) mix(&d, sizeof d);
    mix(t.data().data(), t.size() * sizeof(double));
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_checksum(const Model& model) {
  ParamMap all = model.params;
  all.merge(adapter_params(model.adapters));
  return params_checksum(all);
}

ad::Var mse_loss(const BoundModel& model, const Dataset& sequence) {
  if (!sequence.has_labels()) throw ContractError("mse_loss: sequence carries no labels");
  ad::Tape& tape = model.tape();
  ad::Var out = forward(model, tape.constant(sequence.observations));
  return ad::sum_sq(ad::sub(out, tape.constant(sequence.thetas)));
}

ad::Var stein_loss(const BoundModel& model, const Tensor& observations, double sigma, DivergenceMode mode,
                   double h, std::size_t n_probes, Rng& rng) {
  if (!(h > 0.0)) throw ContractError("stein_loss: h must be > 0");
  ad::Tape& tape = model.tape();
  const std::size_t n = observations.rows();
  ad::Var d = tape.constant(observations);
  ad::Var t = forward(model, d);
  ad::Var fit = ad::sub(ad::sum_sq(t), ad::scale(ad::dot(d, t), 2.0));
  ad::Var div;
  auto add_term = [&](ad::Var term) { div = div.valid() ? ad::add(div, term) : term; };
  if (mode == DivergenceMode::hutchinson) {
    if (n_probes == 0) throw ContractError("stein_loss: n_probes must be >= 1");
    Tensor eps(observations.shape()), plus(observations.shape()), minus(observations.shape());
    for (std::size_t s = 0; s < n_probes; ++s) {
      for (std::size_t j = 0; j < eps.size(); ++j) {
        eps[j] = rng.rademacher();
        plus[j] = observations[j] + h * eps[j];
        minus[j] = observations[j] - h * eps[j];
      }
      ad::Var diff = ad::sub(forward(model, tape.constant(plus)), forward(model, tape.constant(minus)));
      add_term(ad::scale(ad::dot(tape.constant(eps), diff), 1.0 / (2.0 * h * double(n_probes))));
    }
  } else {
    Tensor probe = observations;
    Tensor mask(observations.shape(), 0.0);
    for (std::size_t j = 0; j < observations.size(); ++j) {
      const double orig = probe[j];
      probe[j] = orig + h;
      ad::Var up = forward(model, tape.constant(probe));
      probe[j] = orig - h;
      ad::Var down = forward(model, tape.constant(probe));
      probe[j] = orig;
      mask[j] = 1.0;
      add_term(ad::scale(ad::dot(tape.constant(mask), ad::sub(up, down)), 1.0 / (2.0 * h)));
      mask[j] = 0.0;
    }
  }
  return ad::scale(ad::add(fit, ad::scale(div, 2.0 * sigma * sigma)), 1.0 / double(n));
}

double stein_loss_value(const Model& model, const Tensor& observations, double sigma, DivergenceMode mode,
                        double h, std::size_t n_probes, Rng& rng) {
  const Tensor t = predict(model, observations);
  const std::vector<double> div = mode == DivergenceMode::exact ? divergence_exact(model, observations, h)
                                                                : divergence_hutchinson(model, observations, h,
                                                                                        n_probes, rng);
  double total = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) total += t[j] * t[j] - 2.0 * observations[j] * t[j];
  for (double v : div) {
    if (!std::isfinite(v)) throw NumericalError("stein_loss: non-finite divergence");
    total += 2.0 * sigma * sigma * v;
  }
  return total / double(observations.rows());
}

Model pretrain(Model model, const PretrainCorpus& corpus, const PretrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  check_params(model.config, model.params);
  if (corpus.seq_len() != cfg.seq_len) {
    throw ConfigError("pretrain: corpus seq_len " + std::to_string(corpus.seq_len()) + " differs from config " +
                      std::to_string(cfg.seq_len));
  }
  if (corpus.dim() != model.config.p) {
    throw ShapeError("pretrain: corpus dimension " + std::to_string(corpus.dim()) + " vs model p = " +
                     std::to_string(model.config.p));
  }
  const auto start = Clock::now();
  ad::AdamState adam;
  adam.lr = cfg.lr;
  TrainReport local;
  const double tokens = double(cfg.batch_size * cfg.seq_len * model.config.p);
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    ad::Gradients grads;
    double sq = 0.0;
    try {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const Dataset seq = corpus.sequence((step * cfg.batch_size + b) % corpus.size());
        ad::Tape tape;
        BoundModel bound(tape, model, Trainable::all);
        ad::Var loss = mse_loss(bound, seq);
        sq += loss.value()[0];
        accumulate(grads, tape.backward(loss));
      }
    } catch (const NumericalError& e) {
      throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step) + " (lr=" + fmt_double(cfg.lr) +
                           "): " + e.what());
    }
    const double loss = sq / tokens;
    if (!std::isfinite(loss)) {
      throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step) + " (lr=" +
                           fmt_double(cfg.lr) + ")");
    }
    scale_grads(grads, 1.0 / tokens);
    if (cfg.clip_norm > 0.0) ad::clip_global_norm(grads, cfg.clip_norm);
    ad::adam_step(model.params, grads, adam);
    local.loss.push_back(loss);
    local.wall_ms.push_back(ms_since(start));
  }
  if (report) {
    local.wall_seconds = ms_since(start) / 1000.0;
    for (const auto& [name, t] : model.params) local.trainable_params += t.size();
    local.checksum = params_checksum(model.params);
    std::ostringstream o;
    o << "batch_size=" << cfg.batch_size << " iterations=" << cfg.iterations << " seq_len=" << cfg.seq_len
      << " lr=" << fmt_double(cfg.lr) << " clip=" << fmt_double(cfg.clip_norm) << " seed=" << cfg.seed;
    local.config_echo = o.str();
    *report = std::move(local);
  }
  return model;
}

Model finetune(const Model& pretrained, const Tensor& observations, const FinetuneConfig& cfg, TrainReport* report) {
  cfg.validate();
  check_params(pretrained.config, pretrained.params);
  Model model = pretrained;
  Rng rng(derive_seed(cfg.seed, {hash_label("lora-init")}));
  model.adapters = attach_lora(model.config, cfg.target_modules, cfg.lora_rank, rng);
  return stein_train(std::move(model), observations, cfg, Trainable::adapters, "finetune", report);
}

Model train_from_scratch(Model fresh, const Tensor& observations, const FinetuneConfig& cfg, TrainReport* report) {
  check_params(fresh.config, fresh.params);
  fresh.adapters.clear();
  return stein_train(std::move(fresh), observations, cfg, Trainable::all, "from-scratch", report);
}

}  // namespace ebt
