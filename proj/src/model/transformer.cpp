#include "ebt/model/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "ebt/autodiff/ops.hpp"
#include "ebt/errors.hpp"

namespace ebt {
namespace {

std::string layer_name(const char* prefix, std::size_t l) { return std::string(prefix) + "." + std::to_string(l); }

std::string block_name(std::size_t b) { return "enc." + std::to_string(b); }

std::string head_name(std::size_t b, std::size_t h) { return block_name(b) + ".head." + std::to_string(h); }

/// (d_in, d_out) of every layer of an MLP with `depth` hidden layers.
std::vector<std::pair<std::size_t, std::size_t>> mlp_dims(std::size_t in, std::size_t width, std::size_t depth,
                                                          std::size_t out) {
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  std::size_t prev = in;
  for (std::size_t l = 0; l < depth; ++l) {
    dims.emplace_back(prev, width);
    prev = width;
  }
  dims.emplace_back(prev, out);
  return dims;
}

bool is_weight_matrix(const std::string& name, const Shape& shape) {
  (void)name;
  return shape.size() == 2;
}

std::string module_of(const std::string& name) {
  if (name.rfind("emb.", 0) == 0) return "embedding";
  if (name.rfind("head.", 0) == 0) return "output_head";
  if (name.rfind("norm.", 0) == 0) return "norm";
  if (name.find(".norm.") != std::string::npos) return "norm";
  return "attention";
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const auto emb = mlp_dims(c.p, c.emb_width, c.emb_depth, c.p_emb);
  for (std::size_t l = 0; l < emb.size(); ++l) {
    out.emplace_back(layer_name("emb", l) + ".weight", Shape{emb[l].first, emb[l].second});
    out.emplace_back(layer_name("emb", l) + ".bias", Shape{emb[l].second});
  }
  out.emplace_back("norm.gain", Shape{c.p_emb});
  out.emplace_back("norm.offset", Shape{c.p_emb});
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      out.emplace_back(head_name(b, h) + ".wq", Shape{c.p_emb, c.key_dim()});
      out.emplace_back(head_name(b, h) + ".wk", Shape{c.p_emb, c.key_dim()});
      out.emplace_back(head_name(b, h) + ".wv", Shape{c.p_emb, c.value_dim()});
    }
    out.emplace_back(block_name(b) + ".wo", Shape{c.n_heads * c.value_dim(), c.p_emb});
    out.emplace_back(block_name(b) + ".norm.gain", Shape{c.p_emb});
    out.emplace_back(block_name(b) + ".norm.offset", Shape{c.p_emb});
  }
  const auto head = mlp_dims(c.p_emb, c.oh_width, c.oh_depth, c.p);
  for (std::size_t l = 0; l < head.size(); ++l) {
    out.emplace_back(layer_name("head", l) + ".weight", Shape{head[l].first, head[l].second});
    out.emplace_back(layer_name("head", l) + ".bias", Shape{head[l].second});
  }
  return out;
}

ParamMap init_params(const ModelConfig& config, Rng& rng) {
  ParamMap params;
  // Biases share the fan-in of the weight registered just before them.
  double bound = 1.0;
  for (const auto& [name, shape] : param_layout(config)) {
    Tensor t(shape);
    if (name.ends_with(".gain")) {
      t.fill(1.0);
    } else if (name.ends_with(".offset")) {
      t.fill(0.0);
    } else {
      if (shape.size() == 2) bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

Model make_model(const ModelConfig& config, Rng& rng) { return Model{config, init_params(config, rng), {}}; }

void check_params(const ModelConfig& config, const ParamMap& params) {
  const auto layout = param_layout(config);
  if (params.size() != layout.size()) {
    throw ShapeError("model parameters: expected " + std::to_string(layout.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (const auto& [name, shape] : layout) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("model parameters: missing " + name);
    if (it->second.shape() != shape) {
      throw ShapeError("model parameters: " + name + " has shape " + shape_string(it->second.shape()) +
                       ", expected " + shape_string(shape));
    }
    if (!it->second.all_finite()) throw NumericalError("model parameters: " + name + " is not finite");
  }
}

std::vector<std::string> resolve_targets(const ModelConfig& config, const std::vector<std::string>& modules) {
  const auto layout = param_layout(config);
  std::vector<std::string> out;
  for (const auto& m : modules) {
    bool matched = false;
    for (const auto& [name, shape] : layout) {
      if (!is_weight_matrix(name, shape)) continue;
      if (name == m || module_of(name) == m) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
        matched = true;
      }
    }
    if (!matched) throw ConfigError("LoRA target '" + m + "' matches no weight matrix");
  }
  return out;
}

AdapterSet attach_lora(const ModelConfig& config, const std::vector<std::string>& modules, std::size_t rank,
                       Rng& rng) {
  if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
  const auto targets = resolve_targets(config, modules);
  if (targets.empty()) throw ConfigError("LoRA: empty target set");
  std::map<std::string, Shape> shapes;
  for (const auto& [name, shape] : param_layout(config)) shapes[name] = shape;
  AdapterSet out;
  for (const auto& name : targets) {
    const std::size_t d_in = shapes[name][0], d_out = shapes[name][1];
    const std::size_t r = std::min({rank, d_in, d_out});
    LoraAdapter ad{name, Tensor::matrix(d_out, r, 0.0), Tensor::matrix(r, d_in)};
    for (auto& v : ad.a.data()) v = 0.02 * rng.normal();
    out.emplace(name, std::move(ad));
  }
  return out;
}

void check_adapters(const ModelConfig& config, const ParamMap& params, const AdapterSet& adapters) {
  for (const auto& [name, ad] : adapters) {
    auto it = params.find(name);
    if (it == params.end() || it->second.rank() != 2) {
      throw ConfigError("LoRA adapter targets unknown weight '" + name + "'");
    }
    const std::size_t d_in = it->second.rows(), d_out = it->second.cols();
    if (ad.a.rank() != 2 || ad.b.rank() != 2) throw ShapeError("LoRA adapter '" + name + "': A and B must be matrices");
    const std::size_t r = ad.a.rows();
    if (r == 0 || r > std::min(d_in, d_out)) {
      throw ShapeError("LoRA adapter '" + name + "': rank " + std::to_string(r) + " exceeds min(d_in, d_out)");
    }
    if (ad.a.cols() != d_in || ad.b.rows() != d_out || ad.b.cols() != r) {
      throw ShapeError("LoRA adapter '" + name + "': B " + shape_string(ad.b.shape()) + " / A " +
                       shape_string(ad.a.shape()) + " incompatible with weight " + shape_string(it->second.shape()));
    }
  }
  (void)config;
}

ParamMap merge_adapters(const ParamMap& params, const AdapterSet& adapters) {
  ParamMap out = params;
  for (const auto& [name, ad] : adapters) {
    Tensor& w = out.at(name);
    const std::size_t d_in = w.rows(), d_out = w.cols(), r = ad.rank();
    for (std::size_t i = 0; i < d_in; ++i)
      for (std::size_t o = 0; o < d_out; ++o) {
        double s = 0.0;
        for (std::size_t k = 0; k < r; ++k) s += ad.b(o, k) * ad.a(k, i);
        w(i, o) += s;
      }
  }
  return out;
}

BoundModel::BoundModel(ad::Tape& tape, const Model& model, Trainable trainable)
    : tape_(&tape), config_(&model.config) {
  for (const auto& [name, t] : model.params) {
    vars_.emplace(name, trainable == Trainable::all ? tape.parameter(name, t) : tape.constant(t));
  }
  for (const auto& [name, ad] : model.adapters) {
    if (!vars_.contains(name)) throw ConfigError("LoRA adapter targets unknown weight '" + name + "'");
    const bool train = trainable == Trainable::adapters || trainable == Trainable::all;
    AdapterVars av;
    av.a = train ? tape.parameter("lora/" + name + "/A", ad.a) : tape.constant(ad.a);
    av.b = train ? tape.parameter("lora/" + name + "/B", ad.b) : tape.constant(ad.b);
    adapters_.emplace(name, av);
  }
}

ad::Var BoundModel::param(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("model has no parameter " + name);
  return it->second;
}

ad::Var BoundModel::apply_weight(ad::Var x, const std::string& weight) const {
  ad::Var y = ad::matmul(x, param(weight));
  auto it = adapters_.find(weight);
  if (it == adapters_.end()) return y;
  return ad::add(y, ad::matmul_nt(ad::matmul_nt(x, it->second.a), it->second.b));
}

ad::Var BoundModel::linear(ad::Var x, const std::string& layer) const {
  return ad::add_bias(apply_weight(x, layer + ".weight"), param(layer + ".bias"));
}

ad::Var embed(const BoundModel& m, ad::Var sequence) {
  const auto& c = m.config();
  if (sequence.value().rank() != 2 || sequence.value().cols() != c.p) {
    throw ShapeError("embed: input " + shape_string(sequence.shape()) + " does not have p = " + std::to_string(c.p) +
                     " columns");
  }
  ad::Var x = sequence;
  for (std::size_t l = 0; l < c.emb_depth; ++l) x = ad::relu(m.linear(x, layer_name("emb", l)));
  return m.linear(x, layer_name("emb", c.emb_depth));
}

ad::Var center_norm(ad::Var x, ad::Var gain, ad::Var offset) {
  return ad::add_bias(ad::mul_cols(ad::center_rows(x), gain), offset);
}

ad::Var radical_clip(ad::Var x, double r_clip) { return ad::clip_rows_to_ball(x, r_clip); }

ad::Var attention_forward(const BoundModel& m, ad::Var x, std::size_t block, ForwardTrace* trace) {
  const auto& c = m.config();
  const double inv_sqrt_pk = 1.0 / std::sqrt(static_cast<double>(c.key_dim()));
  std::vector<ad::Var> heads;
  heads.reserve(c.n_heads);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::string prefix = head_name(block, h);
    ad::Var q = ad::matmul(x, m.param(prefix + ".wq"));
    ad::Var k = ad::matmul(x, m.param(prefix + ".wk"));
    ad::Var v = ad::matmul(x, m.param(prefix + ".wv"));
    ad::Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_pk));
    if (trace) trace->attention_weights.push_back(w.value());
    heads.push_back(ad::matmul(w, v));
  }
  return ad::concat_cols(heads);
}

ad::Var encoder_block(const BoundModel& m, ad::Var x, std::size_t block, ForwardTrace* trace) {
  const std::string prefix = block_name(block);
  ad::Var mixed = m.apply_weight(attention_forward(m, x, block, trace), prefix + ".wo");
  return center_norm(ad::add(x, mixed), m.param(prefix + ".norm.gain"), m.param(prefix + ".norm.offset"));
}

ad::Var output_head(const BoundModel& m, ad::Var x) {
  const auto& c = m.config();
  for (std::size_t l = 0; l < c.oh_depth; ++l) x = ad::relu(m.linear(x, layer_name("head", l)));
  return m.linear(x, layer_name("head", c.oh_depth));
}

ad::Var forward(const BoundModel& m, ad::Var sequence, ForwardTrace* trace) {
  const auto& c = m.config();
  ad::Var x = embed(m, sequence);
  x = center_norm(x, m.param("norm.gain"), m.param("norm.offset"));
  x = radical_clip(x, c.r_clip);
  if (trace) trace->clipped_embeddings = x.value();
  for (std::size_t b = 0; b < c.n_blocks; ++b) x = encoder_block(m, x, b, trace);
  return output_head(m, x);
}

Tensor predict(const Model& model, const Tensor& sequence, ForwardTrace* trace) {
  if (sequence.rank() != 2 || sequence.rows() == 0) throw ShapeError("predict: expected an N x p sequence");
  if (!sequence.all_finite()) throw NumericalError("predict: non-finite observations");
  ad::Tape tape;
  BoundModel bound(tape, model, Trainable::none);
  return forward(bound, tape.constant(sequence), trace).value();
}

std::vector<double> divergence_exact(const Model& model, const Tensor& sequence, double h) {
  if (!(h > 0.0)) throw ContractError("divergence_exact: h must be > 0");
  const std::size_t n = sequence.rows(), p = sequence.cols();
  std::vector<double> div(n, 0.0);
  Tensor probe = sequence;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      const double orig = probe(i, k);
      probe(i, k) = orig + h;
      const double up = predict(model, probe)(i, k);
      probe(i, k) = orig - h;
      const double down = predict(model, probe)(i, k);
      probe(i, k) = orig;
      div[i] += (up - down) / (2.0 * h);
    }
  }
  return div;
}

std::vector<double> divergence_hutchinson(const Model& model, const Tensor& sequence, double h,
                                          std::size_t n_probes, Rng& rng) {
  if (!(h > 0.0)) throw ContractError("divergence_hutchinson: h must be > 0");
  if (n_probes == 0) throw ContractError("divergence_hutchinson: n_probes must be >= 1");
  const std::size_t n = sequence.rows(), p = sequence.cols();
  std::vector<double> div(n, 0.0);
  Tensor eps(sequence.shape()), plus(sequence.shape()), minus(sequence.shape());
  for (std::size_t s = 0; s < n_probes; ++s) {
    for (std::size_t j = 0; j < eps.size(); ++j) {
      eps[j] = rng.rademacher();
      plus[j] = sequence[j] + h * eps[j];
      minus[j] = sequence[j] - h * eps[j];
    }
    const Tensor up = predict(model, plus);
    const Tensor down = predict(model, minus);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < p; ++k) div[i] += eps(i, k) * (up(i, k) - down(i, k)) / (2.0 * h);
  }
  for (auto& v : div) v /= static_cast<double>(n_probes);
  return div;
}

ParamCount param_count(const ModelConfig& config, const std::vector<std::string>& lora_modules,
                       std::size_t lora_rank) {
  ParamCount out;
  for (const auto& [name, shape] : param_layout(config)) {
    const std::size_t n = element_count(shape);
    out.total += n;
    out.by_module[module_of(name)] += n;
  }
  if (!lora_modules.empty() && lora_rank > 0) {
    std::map<std::string, Shape> shapes;
    for (const auto& [name, shape] : param_layout(config)) shapes[name] = shape;
    for (const auto& name : resolve_targets(config, lora_modules)) {
      const std::size_t d_in = shapes[name][0], d_out = shapes[name][1];
      out.trainable_lora += std::min({lora_rank, d_in, d_out}) * (d_in + d_out);
    }
  }
  return out;
}

}  // namespace ebt
