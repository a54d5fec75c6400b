#include "ebt/experiment/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ebt/errors.hpp"
#include "ebt/oracle/oracle.hpp"
#include "json.hpp"

namespace ebt {

namespace detail {
// Generated from presets/*.cfg at configure time.
extern const std::vector<std::pair<std::string, std::string>> kPresets;
}  // namespace detail

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(where, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) fail(where, "unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(where, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(where + "." + key, e.what());
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

json prior_json(const Prior& prior) {
  return std::visit(
      [](const auto& k) -> json {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, GaussianMixture>) {
          return {{"type", "gmm"}, {"weights", k.weights}, {"means", k.means}, {"variances", k.variances}};
        } else if constexpr (std::is_same_v<K, Exponential>) {
          return {{"type", "exponential"}, {"mean", k.mean}};
        } else if constexpr (std::is_same_v<K, Uniform>) {
          return {{"type", "uniform"}, {"lo", k.lo}, {"hi", k.hi}};
        } else if constexpr (std::is_same_v<K, PointMassSet>) {
          return {{"type", "point_masses"}, {"atoms", k.atoms}, {"weights", k.weights}};
        } else if constexpr (std::is_same_v<K, NeuralPrior>) {
          return {{"type", "neural"},
                  {"seed", k.seed},
                  {"nets", k.n_nets},
                  {"input_dim", k.input_dim},
                  {"hidden", k.hidden}};
        } else {
          return {{"type", "dp"}, {"alpha", k.alpha}, {"base", prior_json(*k.base)}};
        }
      },
      prior.kind);
}

Prior parse_prior(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where, "prior must be an object");
  const auto type = get<std::string>(j, "type", where);
  Prior p;
  if (type == "gmm") {
    check_keys(j, where, {"type", "weights", "means", "variances"});
    auto means = get<std::vector<double>>(j, "means", where);
    std::vector<double> w(means.size(), 1.0 / double(means.size())), v(means.size(), 1.0);
    maybe(j, "weights", w, where);
    maybe(j, "variances", v, where);
    p = Prior::gaussian_mixture(w, means, v);
  } else if (type == "exponential") {
    check_keys(j, where, {"type", "mean"});
    p = Prior::exponential(get<double>(j, "mean", where));
  } else if (type == "uniform") {
    check_keys(j, where, {"type", "lo", "hi"});
    p = Prior::uniform(get<double>(j, "lo", where), get<double>(j, "hi", where));
  } else if (type == "point_masses") {
    check_keys(j, where, {"type", "atoms", "weights"});
    std::vector<double> w;
    maybe(j, "weights", w, where);
    p = Prior::point_masses(get<std::vector<double>>(j, "atoms", where), w);
  } else if (type == "neural") {
    check_keys(j, where, {"type", "seed", "nets", "input_dim", "hidden"});
    NeuralPrior n;
    maybe(j, "seed", n.seed, where);
    maybe(j, "nets", n.n_nets, where);
    maybe(j, "input_dim", n.input_dim, where);
    maybe(j, "hidden", n.hidden, where);
    p = Prior::neural(n.seed, n.n_nets, n.input_dim, n.hidden);
  } else if (type == "dp") {
    check_keys(j, where, {"type", "alpha", "base"});
    if (!j.contains("base")) fail(where, "missing key 'base'");
    p = Prior::dirichlet_process(get<double>(j, "alpha", where), parse_prior(j.at("base"), where + ".base"));
  } else {
    fail(where, "unknown prior type '" + type + "'");
  }
  return p;
}

std::vector<LabeledPrior> parse_prior_list(const json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array");
  std::vector<LabeledPrior> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    check_keys(j[i], w, {"label", "prior"});
    if (!j[i].contains("prior")) fail(w, "missing key 'prior'");
    Prior p = parse_prior(j[i].at("prior"), w + ".prior");
    std::string label = describe(p);
    maybe(j[i], "label", label, w);
    out.push_back({label, std::move(p)});
  }
  return out;
}

ModelConfig parse_model(const json& j) {
  const std::string w = "model";
  check_keys(j, w,
             {"p", "p_emb", "n_heads", "p_k", "p_v", "emb_depth", "emb_width", "oh_depth", "oh_width", "n_blocks",
              "r_clip"});
  ModelConfig c;
  maybe(j, "p", c.p, w);
  maybe(j, "p_emb", c.p_emb, w);
  maybe(j, "n_heads", c.n_heads, w);
  maybe(j, "p_k", c.p_k, w);
  maybe(j, "p_v", c.p_v, w);
  maybe(j, "emb_depth", c.emb_depth, w);
  maybe(j, "emb_width", c.emb_width, w);
  maybe(j, "oh_depth", c.oh_depth, w);
  maybe(j, "oh_width", c.oh_width, w);
  maybe(j, "n_blocks", c.n_blocks, w);
  maybe(j, "r_clip", c.r_clip, w);
  return c;
}

json model_json(const ModelConfig& c) {
  return {{"p", c.p},           {"p_emb", c.p_emb},       {"n_heads", c.n_heads},   {"p_k", c.p_k},
          {"p_v", c.p_v},       {"emb_depth", c.emb_depth}, {"emb_width", c.emb_width}, {"oh_depth", c.oh_depth},
          {"oh_width", c.oh_width}, {"n_blocks", c.n_blocks}, {"r_clip", c.r_clip}};
}

json decision_json(const DecisionSpec& d) {
  if (const auto* nv = std::get_if<NewsvendorSpec>(&d)) return {{"type", "newsvendor"}, {"b", nv->b}, {"h", nv->h}};
  return {{"type", "pricing"}, {"nu", std::get<PricingSpec>(d).nu}};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail(where, e.what());
  }
}

json resolve_extends(json doc) {
  std::set<std::string> seen;
  while (doc.is_object() && doc.contains("extends")) {
    const auto base_name = get<std::string>(doc, "extends", "config");
    if (!seen.insert(base_name).second) fail("config", "cyclic 'extends' through preset '" + base_name + "'");
    json base = parse_json(preset_text(base_name), "preset " + base_name);
    doc.erase("extends");
    base.merge_patch(doc);
    doc = std::move(base);
  }
  return doc;
}

}  // namespace

const char* sweep_name(SweepKind kind) { return kind == SweepKind::distance ? "distance" : "n"; }

SweepKind parse_sweep(const std::string& name) {
  if (name == "distance") return SweepKind::distance;
  if (name == "n") return SweepKind::n;
  throw ConfigError("unknown sweep '" + name + "' (expected distance or n)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::oracle: return "oracle";
    case Variant::pretrained: return "pretrained";
    case Variant::finetuned: return "finetuned";
    case Variant::scratch: return "scratch";
    case Variant::plugin: return "plugin";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::oracle, Variant::pretrained, Variant::finetuned, Variant::scratch, Variant::plugin}) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

bool ExperimentConfig::has_variant(Variant v) const {
  return std::find(variants.begin(), variants.end(), v) != variants.end();
}

std::size_t ExperimentConfig::sequences_per_corpus() const {
  return corpus_sequences ? corpus_sequences : pretrain.batch_size * pretrain.iterations;
}

void ExperimentConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  if (targets.empty()) throw ConfigError("at least one target prior is required");
  for (const auto& t : targets) ebt::validate(t.prior);
  for (const auto& p : pretrain_priors) ebt::validate(p.prior);
  const bool needs_pretrain = has_variant(Variant::pretrained) || has_variant(Variant::finetuned);
  if (needs_pretrain && pretrain_priors.empty()) throw ConfigError("pretrained variants need pretrain priors");
  std::set<std::string> labels;
  for (const auto& p : pretrain_priors) {
    if (!labels.insert(p.label).second) throw ConfigError("duplicate pretrain label '" + p.label + "'");
  }
  labels.clear();
  for (const auto& t : targets) {
    if (!labels.insert(t.label).second) throw ConfigError("duplicate target label '" + t.label + "'");
  }
  model.validate();
  if (model.p != 1) throw ConfigError("experiments support scalar observations only (model.p = 1)");
  pretrain.validate();
  finetune.validate();
  if (finetune.sigma != sigma) throw ConfigError("finetune sigma differs from the experiment sigma");
  if (n_grid.empty()) throw ConfigError("empty N grid");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] == 0) throw ConfigError("N grid entries must be positive");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ConfigError("N grid must be strictly increasing");
  }
  if (variants.empty()) throw ConfigError("at least one variant is required");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("duplicate seeds");
  }
  if (test_size == 0) throw ConfigError("test_size must be positive");
  if (oracle.mc_atoms < kMinAtoms) throw ConfigError("oracle.mc_atoms must be >= 10000");
  if (oracle.dp_draws == 0) throw ConfigError("oracle.dp_draws must be positive");
  if (hellinger_samples < 10000) throw ConfigError("hellinger_samples must be >= 10000");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (const auto* nv = std::get_if<NewsvendorSpec>(&decision)) {
    nv->validate();
    if (nv->sigma != sigma) throw ConfigError("newsvendor sigma differs from the experiment sigma");
  } else {
    std::get<PricingSpec>(decision).validate();
  }
  if (sequences_per_corpus() == 0) throw ConfigError("empty pretraining corpus");
}

ExperimentConfig parse_config(const std::string& text) {
  json j = resolve_extends(parse_json(text, "config"));
  const std::string w = "config";
  check_keys(j, w,
             {"name", "sweep", "sigma", "target", "targets", "pretrain_priors", "random_pretrain", "model", "pretrain",
              "corpus_sequences", "finetune", "n_grid", "variants", "seeds", "root_seed", "test_size", "decision",
              "oracle", "hellinger_samples", "workers", "output_dir"});
  ExperimentConfig c;
  maybe(j, "name", c.name, w);
  if (j.contains("sweep")) c.sweep = parse_sweep(get<std::string>(j, "sweep", w));
  maybe(j, "sigma", c.sigma, w);
  if (j.contains("target") && j.contains("targets")) fail(w, "give either 'target' or 'targets'");
  if (j.contains("target")) c.targets = parse_prior_list(json::array({j.at("target")}), "target");
  if (j.contains("targets")) c.targets = parse_prior_list(j.at("targets"), "targets");
  if (j.contains("pretrain_priors")) c.pretrain_priors = parse_prior_list(j.at("pretrain_priors"), "pretrain_priors");
  if (j.contains("random_pretrain")) {
    const json& r = j.at("random_pretrain");
    check_keys(r, "random_pretrain", {"count", "seed"});
    const auto count = get<std::size_t>(r, "count", "random_pretrain");
    std::uint64_t seed = 0;
    maybe(r, "seed", seed, "random_pretrain");
    Rng rng(derive_seed(seed, {hash_label("random-pretrain")}));
    for (std::size_t i = 0; i < count; ++i) {
      std::ostringstream label;
      label << "rand-" << (i < 10 ? "0" : "") << i;
      GaussianMixture g = random_pretrain_prior(rng);
      c.pretrain_priors.push_back({label.str(), Prior::gaussian_mixture(g.weights, g.means, g.variances)});
    }
  }
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    const std::string pw = "pretrain";
    check_keys(p, pw, {"batch_size", "iterations", "seq_len", "lr", "clip_norm"});
    maybe(p, "batch_size", c.pretrain.batch_size, pw);
    maybe(p, "iterations", c.pretrain.iterations, pw);
    maybe(p, "seq_len", c.pretrain.seq_len, pw);
    maybe(p, "lr", c.pretrain.lr, pw);
    maybe(p, "clip_norm", c.pretrain.clip_norm, pw);
  }
  maybe(j, "corpus_sequences", c.corpus_sequences, w);
  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    const std::string fw = "finetune";
    check_keys(f, fw,
               {"epochs", "lora_rank", "target_modules", "divergence", "h", "n_probes", "lr", "clip_norm",
                "batch_tokens"});
    maybe(f, "epochs", c.finetune.epochs, fw);
    maybe(f, "lora_rank", c.finetune.lora_rank, fw);
    maybe(f, "target_modules", c.finetune.target_modules, fw);
    if (f.contains("divergence")) c.finetune.divergence = parse_divergence_mode(get<std::string>(f, "divergence", fw));
    maybe(f, "h", c.finetune.h, fw);
    maybe(f, "n_probes", c.finetune.n_probes, fw);
    maybe(f, "lr", c.finetune.lr, fw);
    maybe(f, "clip_norm", c.finetune.clip_norm, fw);
    maybe(f, "batch_tokens", c.finetune.batch_tokens, fw);
  }
  c.finetune.sigma = c.sigma;
  maybe(j, "n_grid", c.n_grid, w);
  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& v : get<std::vector<std::string>>(j, "variants", w)) c.variants.push_back(parse_variant(v));
  }
  maybe(j, "seeds", c.seeds, w);
  maybe(j, "root_seed", c.root_seed, w);
  maybe(j, "test_size", c.test_size, w);
  if (j.contains("decision")) {
    const json& d = j.at("decision");
    const auto type = get<std::string>(d, "type", "decision");
    if (type == "newsvendor") {
      check_keys(d, "decision", {"type", "b", "h"});
      NewsvendorSpec nv{2.0, 2.0, c.sigma};
      maybe(d, "b", nv.b, "decision");
      maybe(d, "h", nv.h, "decision");
      c.decision = nv;
    } else if (type == "pricing") {
      check_keys(d, "decision", {"type", "nu"});
      PricingSpec pr;
      maybe(d, "nu", pr.nu, "decision");
      c.decision = pr;
    } else {
      fail("decision", "unknown type '" + type + "'");
    }
  } else {
    c.decision = NewsvendorSpec{2.0, 2.0, c.sigma};
  }
  if (j.contains("oracle")) {
    const json& o = j.at("oracle");
    check_keys(o, "oracle", {"mc_atoms", "dp_draws"});
    maybe(o, "mc_atoms", c.oracle.mc_atoms, "oracle");
    maybe(o, "dp_draws", c.oracle.dp_draws, "oracle");
  }
  maybe(j, "hellinger_samples", c.hellinger_samples, w);
  maybe(j, "workers", c.workers, w);
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", w);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, text] : detail::kPresets) out.push_back(name);
    return out;
  }();
  return names;
}

const std::string& preset_text(const std::string& name) {
  for (const auto& [n, text] : detail::kPresets) {
    if (n == name) return text;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

ExperimentConfig load_preset(const std::string& name) { return parse_config(preset_text(name)); }

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["sweep"] = sweep_name(c.sweep);
  j["sigma"] = c.sigma;
  auto list = [](const std::vector<LabeledPrior>& ps) {
    json a = json::array();
    for (const auto& p : ps) a.push_back({{"label", p.label}, {"prior", prior_json(p.prior)}});
    return a;
  };
  j["targets"] = list(c.targets);
  j["pretrain_priors"] = list(c.pretrain_priors);
  j["model"] = model_json(c.model);
  j["pretrain"] = {{"batch_size", c.pretrain.batch_size},
                   {"iterations", c.pretrain.iterations},
                   {"seq_len", c.pretrain.seq_len},
                   {"lr", c.pretrain.lr},
                   {"clip_norm", c.pretrain.clip_norm}};
  j["corpus_sequences"] = c.corpus_sequences;
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"lora_rank", c.finetune.lora_rank},
                   {"target_modules", c.finetune.target_modules},
                   {"divergence", divergence_mode_name(c.finetune.divergence)},
                   {"h", c.finetune.h},
                   {"n_probes", c.finetune.n_probes},
                   {"lr", c.finetune.lr},
                   {"clip_norm", c.finetune.clip_norm},
                   {"batch_tokens", c.finetune.batch_tokens}};
  j["n_grid"] = c.n_grid;
  json vs = json::array();
  for (Variant v : c.variants) vs.push_back(variant_name(v));
  j["variants"] = vs;
  j["seeds"] = c.seeds;
  j["root_seed"] = c.root_seed;
  j["test_size"] = c.test_size;
  j["decision"] = decision_json(c.decision);
  j["oracle"] = {{"mc_atoms", c.oracle.mc_atoms}, {"dp_draws", c.oracle.dp_draws}};
  j["hellinger_samples"] = c.hellinger_samples;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir.string();
  return j.dump(2) + "\n";
}

std::string prior_to_json(const Prior& prior) { return prior_json(prior).dump(); }

Prior prior_from_json(const std::string& text) { return parse_prior(parse_json(text, "prior"), "prior"); }

}  // namespace ebt
