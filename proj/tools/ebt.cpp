// Command-line harness: corpus generation, pretraining, finetuning,
// evaluation, the distance and sample-size sweeps, and plotting.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ebt/data/rng.hpp"
#include "ebt/errors.hpp"
#include "ebt/experiment/config.hpp"
#include "ebt/experiment/records.hpp"
#include "ebt/experiment/report.hpp"
#include "ebt/experiment/runner.hpp"
#include "ebt/model/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace ebt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> workers;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file (JSON)");
  cmd->add_option("--preset", c.preset, "shipped preset")->check(CLI::IsMember({"fig3", "fig4", "fig5", "ci"}));
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("-q,--quiet", c.quiet, "no progress log");
}

ExperimentConfig resolve(const Common& c) {
  if (c.config.empty() == c.preset.empty()) throw ConfigError("give exactly one of --config or --preset");
  ExperimentConfig cfg = c.config.empty() ? load_preset(c.preset) : load_config(c.config);
  if (c.seed) cfg.root_seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  return out;
}

std::ostream* log_stream(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

void write_config_echo(const ExperimentConfig& cfg) {
  auto out = open_out(cfg.output_dir / "config.json");
  out << config_to_json(cfg);
}

// One manifest and a CSV of the first sequences per pretraining corpus.
void cmd_gen_corpus(const Common& c, std::size_t dump) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path dir = cfg.output_dir / "corpus";
  for (std::size_t i = 0; i < cfg.pretrain_priors.size(); ++i) {
    const std::uint64_t seed = derive_seed(cfg.root_seed, {hash_label("corpus"), i});
    PretrainCorpus corpus(cfg.pretrain_priors[i].prior, cfg.sequences_per_corpus(), cfg.pretrain.seq_len, cfg.sigma,
                          seed);
    const std::string name = checkpoint_name(i);
    {
      auto out = open_out(dir / (name + ".manifest.txt"));
      out << "label " << cfg.pretrain_priors[i].label << "\n" << corpus.manifest();
    }
    auto csv = open_out(dir / (name + ".csv"));
    csv << "sequence,index,theta,d\n";
    for (std::size_t k = 0; k < std::min(dump, corpus.size()); ++k) {
      const Dataset seq = corpus.sequence(k);
      for (std::size_t j = 0; j < seq.size(); ++j) {
        csv << k << ',' << j << ',' << format_double(seq.thetas(j, 0)) << ',' << format_double(seq.observations(j, 0))
            << '\n';
      }
    }
    if (!c.quiet) std::cerr << name << " " << cfg.pretrain_priors[i].label << ": " << corpus.size() << " sequences\n";
  }
}

void cmd_pretrain(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  write_config_echo(cfg);
  const Manifest m = run_pretrain(cfg, cfg.output_dir, log_stream(c));
  std::size_t failed = 0;
  for (const auto& e : m.entries) {
    std::cout << e.checkpoint << " " << e.label << " " << (e.ok ? "ok" : "failed: " + e.error) << " final_loss "
              << format_double(e.final_loss) << "\n";
    failed += e.ok ? 0 : 1;
  }
  if (failed == m.entries.size() && failed > 0) throw NumericalError("every pretraining run diverged");
}

// Evaluates the oracle, the plug-in and each pretrained checkpoint on every
// (target, seed) test set. n is the test size.
void cmd_eval(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  const auto instances = build_instances(cfg, log_stream(c));
  const Manifest manifest = read_manifest(cfg.output_dir);
  std::vector<std::optional<Model>> models(cfg.pretrain_priors.size());
  for (std::size_t i = 0; i < models.size(); ++i)
    if (i < manifest.entries.size() && manifest.entries[i].ok) models[i] = load_pretrained(cfg, cfg.output_dir, i);

  auto out = open_out(cfg.output_dir / "eval.csv");
  out << kRecordHeader << '\n';
  auto emit = [&](const TargetInstance& inst, const std::string& pretrain, Variant v, const Evaluation& ev) {
    RunRecord r;
    r.run_id = cfg.name + "/eval/" + inst.label + "/" + (pretrain.empty() ? "-" : pretrain) + "/s" +
               std::to_string(inst.seed) + "/" + variant_name(v);
    r.seed = inst.seed;
    r.target = inst.label;
    r.pretrain = pretrain;
    r.n = inst.test.size();
    r.variant = v;
    r.mse_vs_oracle = ev.mse_vs_oracle;
    r.excess_risk = ev.excess_risk;
    out << format_record(r) << '\n';
    std::cout << r.run_id << " excess_risk " << format_double(r.excess_risk) << "\n";
  };
  for (const auto& inst : instances) {
    emit(inst, "", Variant::oracle, evaluate_estimates(cfg, inst, inst.oracle_test));
    emit(inst, "", Variant::plugin, evaluate_estimates(cfg, inst, inst.test.observations));
    for (std::size_t i = 0; i < models.size(); ++i)
      if (models[i]) emit(inst, cfg.pretrain_priors[i].label, Variant::pretrained, evaluate_model(cfg, inst, *models[i]));
  }
}

// Finetunes the pretrained checkpoints at one N and saves the adapted models.
void cmd_finetune(const Common& c, std::optional<std::size_t> n_opt, std::optional<std::size_t> prior_opt) {
  ExperimentConfig cfg = resolve(c);
  const std::size_t n = n_opt.value_or(cfg.n_grid.back());
  if (n == 0) throw ConfigError("--n must be positive");
  if (n > cfg.n_grid.back()) cfg.n_grid.push_back(n);
  if (prior_opt && *prior_opt >= cfg.pretrain_priors.size()) throw ConfigError("--prior out of range");
  const auto instances = build_instances(cfg, log_stream(c));
  const Manifest manifest = read_manifest(cfg.output_dir);
  for (const auto& inst : instances) {
    const Tensor sample = finetune_sample(inst, n);
    for (std::size_t i = 0; i < cfg.pretrain_priors.size(); ++i) {
      if (prior_opt && i != *prior_opt) continue;
      if (i < manifest.entries.size() && !manifest.entries[i].ok) continue;
      const Model pre = load_pretrained(cfg, cfg.output_dir, i);
      FinetuneConfig fc = cfg.finetune;
      fc.seed = finetune_seed(cfg, inst.target_index, i, n, inst.seed);
      TrainReport report;
      const Model tuned = finetune(pre, sample, fc, &report);
      const std::string stem = "t" + std::to_string(inst.target_index) + "-s" + std::to_string(inst.seed) + "-" +
                               checkpoint_name(i) + "-n" + std::to_string(n);
      const fs::path dir = cfg.output_dir / "finetuned";
      fs::create_directories(dir);
      save_model(dir / (stem + ".ebtf"), tuned);
      {
        auto loss = open_out(dir / (stem + ".loss.csv"));
        write_report_csv(loss, report);
      }
      const Evaluation before = evaluate_model(cfg, inst, pre), after = evaluate_model(cfg, inst, tuned);
      std::cout << stem << " " << inst.label << " " << cfg.pretrain_priors[i].label << " excess_risk "
                << format_double(before.excess_risk) << " -> " << format_double(after.excess_risk) << "\n";
    }
  }
}

void cmd_sweep(const Common& c, SweepKind kind) {
  ExperimentConfig cfg = resolve(c);
  cfg.sweep = kind;
  write_config_echo(cfg);
  const fs::path csv_path = cfg.output_dir / "records.csv";
  const fs::path tmp = cfg.output_dir / "records.csv.partial";
  {
    auto csv = open_out(tmp);
    auto timings = open_out(cfg.output_dir / "timings.csv");
    SweepOptions opt;
    opt.csv = &csv;
    opt.timings = &timings;
    opt.log = log_stream(c);
    const auto records = run_sweep(cfg, cfg.output_dir, opt);
    std::cout << records.size() << " records\n";
  }
  fs::rename(tmp, csv_path);
  std::cout << csv_path.string() << "\n";
}

void cmd_report(const std::string& csv, const std::string& out) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + csv);
  const auto records = read_records(in);
  const fs::path dir = out.empty() ? fs::path(csv).parent_path() : fs::path(out);
  for (const auto& p : write_report(records, dir.empty() ? fs::path(".") : dir)) std::cout << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer empirical Bayes experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::size_t dump = 1;
  std::optional<std::size_t> ft_n, ft_prior;
  std::string report_csv, report_out;

  auto* gen = app.add_subcommand("gen-corpus", "write pretraining corpus manifests and sample sequences");
  add_common(gen, common);
  gen->add_option("--sequences", dump, "sequences dumped to CSV per corpus");
  auto* pre = app.add_subcommand("pretrain", "pretrain one model per pretraining prior");
  add_common(pre, common);
  auto* ft = app.add_subcommand("finetune", "LoRA-finetune pretrained checkpoints on target data");
  add_common(ft, common);
  ft->add_option("--n", ft_n, "finetuning sample size (default: largest N in the grid)");
  ft->add_option("--prior", ft_prior, "only this pretraining prior index");
  auto* ev = app.add_subcommand("eval", "score oracle, plug-in and pretrained models on the test sets");
  add_common(ev, common);
  auto* sd = app.add_subcommand("sweep-distance", "excess risk versus pretraining distance");
  add_common(sd, common);
  auto* sn = app.add_subcommand("sweep-n", "excess risk versus finetuning sample size");
  add_common(sn, common);
  auto* rep = app.add_subcommand("report", "SVG plots and summary tables from a records CSV");
  rep->add_option("csv", report_csv, "records CSV")->required();
  rep->add_option("--out", report_out, "output directory (default: next to the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) cmd_gen_corpus(common, dump);
    else if (*pre) cmd_pretrain(common);
    else if (*ft) cmd_finetune(common, ft_n, ft_prior);
    else if (*ev) cmd_eval(common);
    else if (*sd) cmd_sweep(common, SweepKind::distance);
    else if (*sn) cmd_sweep(common, SweepKind::n);
    else if (*rep) cmd_report(report_csv, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NoDataError& e) {
    std::cerr << "no data: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
