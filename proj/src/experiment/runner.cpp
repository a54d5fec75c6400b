#include "ebt/experiment/runner.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "ebt/errors.hpp"
#include "ebt/experiment/pool.hpp"
#include "ebt/model/checkpoint.hpp"
#include "json.hpp"

namespace ebt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t key(const char* label) { return hash_label(label); }

bool is_dp(const Prior& p) { return p.as<DirichletProcess>() != nullptr; }

std::optional<double> mixture_distance(const Prior& pre, const Prior& target) {
  const auto* a = pre.as<GaussianMixture>();
  const auto* b = target.as<GaussianMixture>();
  if (!a || !b) return std::nullopt;
  try {
    return l2_mean_distance(*a, *b);
  } catch (const ConfigError&) {
    return std::nullopt;
  }
}

std::string run_id(const ExperimentConfig& cfg, const std::string& target, const std::string& pretrain,
                   std::size_t n, std::uint64_t seed, Variant v) {
  std::ostringstream s;
  s << (cfg.name.empty() ? "run" : cfg.name) << '/' << target << '/' << (pretrain.empty() ? "-" : pretrain) << "/n"
    << n << "/s" << seed << '/' << variant_name(v);
  return s.str();
}

}  // namespace

fs::path manifest_path(const fs::path& out_dir) { return out_dir / "manifest.json"; }

std::string checkpoint_name(std::size_t prior_index) {
  std::ostringstream s;
  s << "pretrain-" << (prior_index < 10 ? "0" : "") << prior_index;
  return s.str();
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["config"] = m.config_name;
  j["root_seed"] = m.root_seed;
  j["model"] = m.model_config;
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"index", e.index},
                       {"label", e.label},
                       {"prior", json::parse(e.prior_json)},
                       {"checkpoint", e.checkpoint},
                       {"corpus_seed", e.corpus_seed},
                       {"init_seed", e.init_seed},
                       {"status", e.ok ? "ok" : "failed"},
                       {"error", e.error},
                       {"final_loss", e.final_loss},
                       {"checksum", e.checksum}});
  }
  j["entries"] = entries;
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Manifest m;
    m.config_name = j.at("config").get<std::string>();
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    m.model_config = j.at("model").get<std::string>();
    for (const auto& e : j.at("entries")) {
      PretrainEntry p;
      p.index = e.at("index").get<std::size_t>();
      p.label = e.at("label").get<std::string>();
      p.prior_json = e.at("prior").dump();
      p.checkpoint = e.at("checkpoint").get<std::string>();
      p.corpus_seed = e.at("corpus_seed").get<std::uint64_t>();
      p.init_seed = e.at("init_seed").get<std::uint64_t>();
      p.ok = e.at("status").get<std::string>() == "ok";
      p.error = e.at("error").get<std::string>();
      p.final_loss = e.at("final_loss").get<double>();
      p.checksum = e.at("checksum").get<std::string>();
      m.entries.push_back(std::move(p));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

Manifest read_manifest(const fs::path& out_dir) {
  const fs::path path = manifest_path(out_dir);
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing manifest " + path.string() + " (run `pretrain` first)");
  std::ostringstream s;
  s << in.rdbuf();
  return manifest_from_json(s.str());
}

Manifest run_pretrain(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream* log) {
  cfg.validate();
  fs::create_directories(out_dir / "checkpoints");
  Manifest manifest;
  manifest.config_name = cfg.name;
  manifest.root_seed = cfg.root_seed;
  manifest.model_config = cfg.model.to_text();
  manifest.entries.resize(cfg.pretrain_priors.size());
  std::mutex log_mu;

  std::function<PretrainEntry(std::size_t)> task = [&](std::size_t i) {
    const auto& lp = cfg.pretrain_priors[i];
    PretrainEntry e;
    e.index = i;
    e.label = lp.label;
    e.prior_json = prior_to_json(lp.prior);
    e.checkpoint = "checkpoints/" + checkpoint_name(i) + ".ebtf";
    e.corpus_seed = derive_seed(cfg.root_seed, {key("corpus"), i});
    e.init_seed = derive_seed(cfg.root_seed, {key("init"), i});
    const auto t0 = Clock::now();
    try {
      PretrainCorpus corpus(lp.prior, cfg.sequences_per_corpus(), cfg.pretrain.seq_len, cfg.sigma, e.corpus_seed);
      Rng init(e.init_seed);
      PretrainConfig pc = cfg.pretrain;
      pc.seed = e.corpus_seed;
      TrainReport report;
      Model model = pretrain(make_model(cfg.model, init), corpus, pc, &report);
      save_model(out_dir / e.checkpoint, model);
      std::ofstream loss(out_dir / "checkpoints" / (checkpoint_name(i) + ".loss.csv"));
      write_report_csv(loss, report);
      e.ok = true;
      e.final_loss = report.loss.back();
      e.checksum = report.checksum;
    } catch (const NumericalError& err) {
      e.ok = false;
      e.error = err.what();
    }
    if (log) {
      std::lock_guard<std::mutex> lock(log_mu);
      *log << "pretrain " << e.label << ": " << (e.ok ? "ok, final loss " + format_double(e.final_loss) : e.error)
           << " (" << seconds_since(t0) << " s)\n";
    }
    return e;
  };
  std::function<void(std::size_t, PretrainEntry&&)> sink = [&](std::size_t i, PretrainEntry&& e) {
    manifest.entries[i] = std::move(e);
  };
  run_ordered(cfg.pretrain_priors.size(), cfg.workers, task, sink);

  std::ofstream out(manifest_path(out_dir));
  if (!out) throw ArtifactError("cannot write " + manifest_path(out_dir).string());
  out << manifest_to_json(manifest);
  return manifest;
}

Model load_pretrained(const ExperimentConfig& cfg, const fs::path& out_dir, std::size_t index) {
  const Manifest m = read_manifest(out_dir);
  if (index >= m.entries.size() || index >= cfg.pretrain_priors.size()) {
    throw ArtifactError("manifest has no pretrained model #" + std::to_string(index));
  }
  if (m.root_seed != cfg.root_seed) {
    throw ArtifactError("checkpoints in " + out_dir.string() + " were pretrained with root seed " +
                        std::to_string(m.root_seed) + ", not " + std::to_string(cfg.root_seed));
  }
  const PretrainEntry& e = m.entries[index];
  if (e.label != cfg.pretrain_priors[index].label ||
      json::parse(e.prior_json) != json::parse(prior_to_json(cfg.pretrain_priors[index].prior))) {
    throw ArtifactError("manifest entry " + e.label + " does not match pretrain prior " +
                        cfg.pretrain_priors[index].label + " of the configuration");
  }
  if (!e.ok) throw ArtifactError("pretraining failed for " + e.label + ": " + e.error);
  const fs::path path = out_dir / e.checkpoint;
  if (!fs::exists(path)) throw ArtifactError("missing checkpoint " + path.string());
  Model model = load_model(path);
  if (!(model.config == cfg.model)) {
    throw ArtifactError("checkpoint " + path.string() + " was trained with a different model configuration");
  }
  if (params_checksum(model.params) != e.checksum) {
    throw ArtifactError("checkpoint " + path.string() + " does not match the checksum in the manifest");
  }
  return model;
}

std::vector<TargetInstance> build_instances(const ExperimentConfig& cfg, std::ostream* log) {
  std::vector<TargetInstance> out;
  std::size_t max_n = cfg.n_grid.back();
  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    const auto& target = cfg.targets[t];
    std::shared_ptr<const Oracle> shared;
    if (!is_dp(target.prior)) {
      const auto t0 = Clock::now();
      shared = std::make_shared<Oracle>(Oracle::best_available(target.prior, cfg.sigma, cfg.oracle.mc_atoms,
                                                               derive_seed(cfg.root_seed, {key("oracle-atoms"), t})));
      if (log && shared->backend() == OracleBackend::monte_carlo) {
        *log << "oracle " << target.label << ": Monte Carlo, " << shared->marginal().atoms().atoms.size()
             << " binned atoms (" << seconds_since(t0) << " s)\n";
      }
    }
    for (std::uint64_t seed : cfg.seeds) {
      TargetInstance inst;
      inst.target_index = t;
      inst.seed = seed;
      inst.label = target.label;
      if (shared) {
        inst.prior = target.prior;
        inst.oracle = shared;
      } else {
        Rng rng(derive_seed(cfg.root_seed, {key("realize"), t, seed}));
        inst.prior = realize(target.prior, cfg.oracle.dp_draws, rng);
        inst.oracle = std::make_shared<Oracle>(Oracle::closed_form(inst.prior, cfg.sigma));
      }
      inst.test = sample_dataset(HierarchicalConfig{inst.prior, cfg.sigma, cfg.test_size, 1},
                                 derive_seed(cfg.root_seed, {key("test"), t, seed}));
      inst.oracle_test = inst.oracle->posterior_mean(inst.test.observations);
      inst.finetune_pool = sample_dataset(HierarchicalConfig{inst.prior, cfg.sigma, max_n, 1},
                                          derive_seed(cfg.root_seed, {key("finetune-data"), t, seed}))
                               .observations;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

Tensor finetune_sample(const TargetInstance& inst, std::size_t n) {
  if (n > inst.finetune_pool.rows()) {
    throw ContractError("finetune_sample: N = " + std::to_string(n) + " exceeds the pool of " +
                        std::to_string(inst.finetune_pool.rows()));
  }
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) out[i] = inst.finetune_pool[i];
  return out;
}

Evaluation evaluate_estimates(const ExperimentConfig& cfg, const TargetInstance& inst, const Tensor& estimates) {
  Evaluation e;
  e.mse_vs_oracle = estimation_error(estimates, inst.oracle_test);
  const ExcessRisk er = excess_risk(estimates, inst.oracle_test, inst.test.thetas, cfg.decision);
  e.excess_risk = er.mean;
  e.excess_se = er.std_error;
  return e;
}

Evaluation evaluate_model(const ExperimentConfig& cfg, const TargetInstance& inst, const Model& model) {
  return evaluate_estimates(cfg, inst, predict(model, inst.test.observations));
}

std::uint64_t finetune_seed(const ExperimentConfig& cfg, std::size_t target, std::size_t prior, std::size_t n,
                            std::uint64_t seed) {
  return derive_seed(cfg.root_seed, {key("finetune"), target, prior, n, seed});
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir, const SweepOptions& options) {
  cfg.validate();
  std::ostream* log = options.log;
  const bool want_pre = cfg.has_variant(Variant::pretrained) || cfg.has_variant(Variant::finetuned);

  // Pretrained snapshots; priors whose pretraining failed are skipped.
  std::vector<std::optional<Model>> models(cfg.pretrain_priors.size());
  if (want_pre) {
    const Manifest manifest = read_manifest(out_dir);
    for (std::size_t i = 0; i < cfg.pretrain_priors.size(); ++i) {
      if (i < manifest.entries.size() && !manifest.entries[i].ok) {
        if (log) *log << "skipping " << manifest.entries[i].label << ": " << manifest.entries[i].error << "\n";
        continue;
      }
      models[i] = load_pretrained(cfg, out_dir, i);
    }
  }

  const std::vector<TargetInstance> instances = build_instances(cfg, log);

  // Distances per (instance, prior); computed once per target unless the target is realised per seed.
  struct Distance {
    std::optional<double> l2, hellinger;
  };
  std::vector<std::vector<Distance>> dist(instances.size(), std::vector<Distance>(cfg.pretrain_priors.size()));
  if (want_pre) {
    std::map<std::pair<std::size_t, std::size_t>, Distance> cache;
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const auto& inst = instances[k];
      const bool per_seed = is_dp(cfg.targets[inst.target_index].prior);
      for (std::size_t i = 0; i < cfg.pretrain_priors.size(); ++i) {
        if (!models[i]) continue;
        const auto ck = std::make_pair(inst.target_index, i);
        if (!per_seed && cache.count(ck)) {
          dist[k][i] = cache.at(ck);
          continue;
        }
        Distance d;
        d.l2 = mixture_distance(cfg.pretrain_priors[i].prior, inst.prior);
        const MarginalDensity pre = MarginalDensity::best_available(
            cfg.pretrain_priors[i].prior, cfg.sigma, cfg.oracle.mc_atoms, derive_seed(cfg.root_seed, {key("pre-atoms"), i}));
        Rng rng(derive_seed(cfg.root_seed, {key("hellinger"), inst.target_index, i, per_seed ? inst.seed : 0}));
        d.hellinger = hellinger_symmetric(pre, inst.oracle->marginal(), cfg.hellinger_samples, rng);
        dist[k][i] = d;
        if (!per_seed) cache.emplace(ck, d);
      }
    }
  }

  struct Cell {
    enum Kind { baseline, pretrained, finetuned, scratch } kind;
    std::size_t inst, prior, n;
  };
  std::vector<Cell> cells;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    if (cfg.has_variant(Variant::oracle) || cfg.has_variant(Variant::plugin)) cells.push_back({Cell::baseline, k, 0, 0});
    if (cfg.has_variant(Variant::pretrained)) {
      for (std::size_t i = 0; i < models.size(); ++i)
        if (models[i]) cells.push_back({Cell::pretrained, k, i, 0});
    }
    for (std::size_t n : cfg.n_grid) {
      if (cfg.has_variant(Variant::finetuned)) {
        for (std::size_t i = 0; i < models.size(); ++i)
          if (models[i]) cells.push_back({Cell::finetuned, k, i, n});
      }
      if (cfg.has_variant(Variant::scratch)) cells.push_back({Cell::scratch, k, 0, n});
    }
  }

  struct CellResult {
    std::vector<RunRecord> records;
    std::vector<double> seconds;
  };
  std::function<CellResult(std::size_t)> task = [&](std::size_t c) {
    const Cell& cell = cells[c];
    const TargetInstance& inst = instances[cell.inst];
    const std::size_t t = inst.target_index;
    CellResult out;
    auto base = [&](Variant v, std::size_t n, const std::string& pre) {
      RunRecord r;
      r.run_id = run_id(cfg, inst.label, pre, n, inst.seed, v);
      r.seed = inst.seed;
      r.target = inst.label;
      r.pretrain = pre;
      r.n = n;
      r.variant = v;
      return r;
    };
    auto fill = [](RunRecord& r, const Evaluation& e) {
      r.mse_vs_oracle = e.mse_vs_oracle;
      r.excess_risk = e.excess_risk;
    };
    auto with_distance = [&](RunRecord& r, std::size_t i) {
      r.l2_distance = dist[cell.inst][i].l2;
      r.hellinger = dist[cell.inst][i].hellinger;
    };
    const auto t0 = Clock::now();
    switch (cell.kind) {
      case Cell::baseline: {
        const Evaluation plug = evaluate_estimates(cfg, inst, inst.test.observations);
        const double dt = seconds_since(t0);
        for (std::size_t n : cfg.n_grid) {
          if (cfg.has_variant(Variant::oracle)) {
            RunRecord r = base(Variant::oracle, n, "");
            fill(r, evaluate_estimates(cfg, inst, inst.oracle_test));
            out.records.push_back(r);
            out.seconds.push_back(0.0);
          }
          if (cfg.has_variant(Variant::plugin)) {
            RunRecord r = base(Variant::plugin, n, "");
            fill(r, plug);
            out.records.push_back(r);
            out.seconds.push_back(dt);
          }
        }
        break;
      }
      case Cell::pretrained: {
        const Evaluation e = evaluate_model(cfg, inst, *models[cell.prior]);
        const double dt = seconds_since(t0);
        for (std::size_t n : cfg.n_grid) {
          RunRecord r = base(Variant::pretrained, n, cfg.pretrain_priors[cell.prior].label);
          with_distance(r, cell.prior);
          fill(r, e);
          out.records.push_back(r);
          out.seconds.push_back(dt);
        }
        break;
      }
      case Cell::finetuned: {
        FinetuneConfig fc = cfg.finetune;
        fc.seed = finetune_seed(cfg, t, cell.prior, cell.n, inst.seed);
        const Model tuned = finetune(*models[cell.prior], finetune_sample(inst, cell.n), fc);
        RunRecord r = base(Variant::finetuned, cell.n, cfg.pretrain_priors[cell.prior].label);
        with_distance(r, cell.prior);
        fill(r, evaluate_model(cfg, inst, tuned));
        out.records.push_back(r);
        out.seconds.push_back(seconds_since(t0));
        break;
      }
      case Cell::scratch: {
        FinetuneConfig fc = cfg.finetune;
        fc.seed = derive_seed(cfg.root_seed, {key("scratch"), t, cell.n, inst.seed});
        Rng init(derive_seed(cfg.root_seed, {key("scratch-init"), t, cell.n, inst.seed}));
        const Model trained = train_from_scratch(make_model(cfg.model, init), finetune_sample(inst, cell.n), fc);
        RunRecord r = base(Variant::scratch, cell.n, "");
        fill(r, evaluate_model(cfg, inst, trained));
        out.records.push_back(r);
        out.seconds.push_back(seconds_since(t0));
        break;
      }
    }
    return out;
  };

  std::vector<RunRecord> all;
  if (options.csv) *options.csv << kRecordHeader << '\n' << std::flush;
  if (options.timings) *options.timings << "run_id,wall_seconds\n";
  std::function<void(std::size_t, CellResult&&)> sink = [&](std::size_t c, CellResult&& res) {
    for (std::size_t j = 0; j < res.records.size(); ++j) {
      const RunRecord& r = res.records[j];
      if (options.csv) *options.csv << format_record(r) << '\n';
      if (options.timings) *options.timings << r.run_id << ',' << format_double(res.seconds[j]) << '\n';
      if (log) {
        *log << "[" << c + 1 << "/" << cells.size() << "] " << r.run_id << " mse=" << r.mse_vs_oracle
             << " excess=" << r.excess_risk << " (" << res.seconds[j] << " s)\n";
      }
      all.push_back(r);
    }
    if (options.csv) options.csv->flush();
  };
  run_ordered(cells.size(), cfg.workers, task, sink);
  return all;
}

}  // namespace ebt
