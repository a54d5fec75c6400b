// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [criterion numbers...] [--work DIR]
//
// Criteria 6-10 pretrain and sweep desk-scale models under DIR; the directory
// is wiped per criterion so every run starts from nothing.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ebt/autodiff/ops.hpp"
#include "ebt/experiment/config.hpp"
#include "ebt/experiment/records.hpp"
#include "ebt/experiment/report.hpp"
#include "ebt/experiment/runner.hpp"
#include "ebt/oracle/oracle.hpp"
#include "support.hpp"

using namespace ebt;
namespace fs = std::filesystem;

namespace {

fs::path g_work = EBT_ACCEPTANCE_WORK;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Prior target_mixture() { return Prior::gaussian_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 3, 4}, {1, 1, 1}); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = g_work / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Pretrain + sweep into `dir`, as `ebt pretrain` followed by a sweep would.
std::vector<RunRecord> pretrain_and_sweep(ExperimentConfig cfg, const fs::path& dir) {
  cfg.output_dir = dir;
  const Manifest m = run_pretrain(cfg, dir);
  for (const auto& e : m.entries)
    if (!e.ok) std::cerr << "  pretraining " << e.label << " failed: " << e.error << "\n";
  std::ofstream csv(dir / "records.csv", std::ios::binary);
  std::ofstream timings(dir / "timings.csv", std::ios::binary);
  SweepOptions opt;
  opt.csv = &csv;
  opt.timings = &timings;
  auto records = run_sweep(cfg, dir, opt);
  csv.close();
  write_report(records, dir);
  return records;
}

double seed_mean(const std::vector<RunRecord>& rows, const std::string& target, const std::string& pretrain,
                 std::size_t n, Variant v) {
  std::vector<double> xs;
  for (const auto& r : rows)
    if (r.target == target && r.pretrain == pretrain && r.n == n && r.variant == v) xs.push_back(r.excess_risk);
  return mean(xs);
}

// 1. Stein identity with exact divergences on random models.
Outcome stein_identity() {
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = ebt::testing::small_config();
    c.n_blocks = 1 + rng.index(2);
    Model m = make_model(c, rng);
    const Dataset data = sample_dataset(HierarchicalConfig{target_mixture(), 1.0, 100000, 1}, 5000 + trial);
    const auto s = ebt::testing::stein_check(m, data, 8, DivergenceMode::exact, 1.0);
    worst = std::max(worst, s.relative_gap());
  }
  return {worst <= 0.02, "20 models, N = 1e5, worst |stein + E theta^2 - mse| / mse = " + fmt("%.4f", worst) +
                             " (bound 0.02)"};
}

// 2. Reverse mode against central differences, parameters and adapters.
Outcome gradients() {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c;
    c.p = 1 + rng.index(2);
    c.n_heads = 1 + rng.index(2);
    c.p_emb = 4 * c.n_heads;
    c.emb_depth = rng.index(2);
    c.emb_width = 3 + rng.index(4);
    c.oh_depth = rng.index(3);
    c.oh_width = 3 + rng.index(4);
    c.n_blocks = 1 + rng.index(2);
    c.r_clip = rng.uniform() < 0.5 ? 10.0 : 0.8;
    Model m = make_model(c, rng);
    m.adapters = attach_lora(c, {"embedding", "output_head"}, 2, rng);
    for (auto& [name, ad] : m.adapters)
      for (auto& v : ad.b.data()) v = 0.2 * rng.normal();
    const std::size_t n = 2 + rng.index(5);
    Tensor x({n, c.p}), y({n, c.p});
    for (auto& v : x.data()) v = 2.0 * rng.normal();
    for (auto& v : y.data()) v = rng.normal();

    ad::ParamMap start = m.params;
    for (const auto& [target, ad] : m.adapters) {
      start.emplace("lora/" + target + "/A", ad.a);
      start.emplace("lora/" + target + "/B", ad.b);
    }
    auto loss = [&](ad::Tape& t, const ad::ParamMap& q) {
      Model tmp{c, {}, m.adapters};
      for (const auto& [name, v] : q)
        if (name.rfind("lora/", 0) != 0) tmp.params.emplace(name, v);
      for (auto& [target, ad] : tmp.adapters) {
        ad.a = q.at("lora/" + target + "/A");
        ad.b = q.at("lora/" + target + "/B");
      }
      BoundModel bound(t, tmp, Trainable::all);
      return ad::sum_sq(ad::sub(forward(bound, t.constant(x)), t.constant(y)));
    };
    const auto analytic = ebt::testing::tape_grads(loss, start);
    const auto numeric = ebt::testing::fd_grads(loss, start, 1e-6);
    double diff = 0.0, ref = 0.0;
    for (const auto& [name, g] : numeric) {
      const Tensor& a = analytic.at(name);
      for (std::size_t j = 0; j < g.size(); ++j) {
        diff += (a[j] - g[j]) * (a[j] - g[j]);
        ref += g[j] * g[j];
      }
    }
    worst = std::max(worst, std::sqrt(diff / ref));
  }
  return {worst <= 1e-5, "100 networks, worst relative error " + fmt("%.2e", worst) + " (bound 1e-5)"};
}

// 3. Oracle backends against an independent quadrature and each other.
Outcome oracles() {
  using boost::math::quadrature::gauss_kronrod;
  const Prior prior = target_mixture();
  const Oracle exact = Oracle::closed_form(prior, 1.0);
  const Oracle mc = Oracle::monte_carlo(prior, 1.0, 1000000, 1003);
  const double center = 8.0 / 3.0, sd = std::sqrt(1.0 + 14.0 / 9.0 + 1.0);
  double q_err = 0.0, mc_err = 0.0, tw_err = 0.0;
  for (int i = 0; i <= 160; ++i) {
    const double d = center - 4.0 * sd + 8.0 * sd * i / 160.0;
    // Posterior mean by quadrature, kernel shifted by its peak.
    auto log_w = [&](double t) {
      double g = 0.0;
      for (double m : {1.0, 3.0, 4.0}) g += std::exp(-0.5 * (t - m) * (t - m)) / 3.0;
      return std::log(g) - 0.5 * (d - t) * (d - t);
    };
    double peak = -INFINITY;
    for (int k = 0; k <= 4000; ++k) peak = std::max(peak, log_w(-15.0 + 35.0 * k / 4000.0));
    auto w = [&](double t) { return std::exp(log_w(t) - peak); };
    const double num = gauss_kronrod<double, 61>::integrate([&](double t) { return t * w(t); }, -15, 20, 20, 1e-14);
    const double den = gauss_kronrod<double, 61>::integrate(w, -15, 20, 20, 1e-14);
    const double cf = exact.posterior_mean(d);
    q_err = std::max(q_err, std::abs(cf - num / den));
    mc_err = std::max(mc_err, std::abs(cf - mc.posterior_mean(d)));
    tw_err = std::max(tw_err, std::abs(cf - tweedie_posterior_mean(exact.marginal(), d)));
  }
  const bool pass = q_err <= 1e-8 && mc_err <= 1e-2 && tw_err <= 1e-4;
  return {pass, "over +-4 marginal sd: quadrature " + fmt("%.1e", q_err) + " (1e-8), Monte Carlo M = 1e6 " +
                    fmt("%.1e", mc_err) + " (1e-2), Tweedie " + fmt("%.1e", tw_err) + " (1e-4)"};
}

// 4. Hellinger estimate against the Gaussian closed form.
Outcome hellinger() {
  const MarginalDensity n0 = MarginalDensity::closed_form(Prior::point_masses({0.0}), 1.0);
  const MarginalDensity n1 = MarginalDensity::closed_form(Prior::point_masses({1.0}), 1.0);
  Rng rng(1004);
  const double h = hellinger_mc(n0, n1, 1000000, rng);
  const double same = hellinger_mc(n0, n0, 1000000, rng);
  const double closed = std::sqrt(1.0 - std::exp(-1.0 / 8.0));
  const bool pass = std::abs(h - closed) <= 0.01 && same <= 0.01;
  return {pass, "H(N(0,1), N(1,1)) = " + fmt("%.5f", h) + " vs " + fmt("%.5f", closed) + ", identical inputs " +
                    fmt("%.1e", same)};
}

// 5. Permutation equivariance, attention simplex, clipping, LoRA zero init.
Outcome architecture() {
  Rng rng(1005);
  double perm_err = 0.0, row_err = 0.0, clip_excess = -INFINITY, lora_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = ebt::testing::small_config(1 + rng.index(2));
    c.n_blocks = 1 + rng.index(2);
    c.r_clip = trial % 2 ? 10.0 : 0.5;
    Model m = make_model(c, rng);
    const std::size_t n = 3 + rng.index(20);
    Tensor x({n, c.p});
    for (auto& v : x.data()) v = 5.0 * rng.normal();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    auto permute = [&](const Tensor& t) {
      Tensor out(t.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < t.cols(); ++k) out(i, k) = t(perm[i], k);
      return out;
    };
    ForwardTrace trace;
    const Tensor y = predict(m, x, &trace);
    const Tensor yp = predict(m, permute(x));
    const Tensor py = permute(y);
    for (std::size_t j = 0; j < y.size(); ++j) perm_err = std::max(perm_err, std::abs(yp[j] - py[j]));
    for (const auto& w : trace.attention_weights)
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j);
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
    for (std::size_t i = 0; i < trace.clipped_embeddings.rows(); ++i) {
      double s = 0.0;
      for (double v : trace.clipped_embeddings.row(i)) s += v * v;
      clip_excess = std::max(clip_excess, std::sqrt(s) - c.r_clip);
    }
    Model adapted = m;
    adapted.adapters = attach_lora(c, {"embedding", "output_head", "attention"}, 4, rng);
    const Tensor ya = predict(adapted, x);
    for (std::size_t j = 0; j < y.size(); ++j) lora_err = std::max(lora_err, std::abs(ya[j] - y[j]));
  }
  const bool pass = perm_err <= 1e-10 && row_err <= 1e-12 && clip_excess <= 1e-12 && lora_err <= 1e-12;
  return {pass, "permutation " + fmt("%.1e", perm_err) + ", attention rows " + fmt("%.1e", row_err) +
                    ", clip norm - R " + fmt("%.1e", clip_excess) + ", LoRA zero init " + fmt("%.1e", lora_err)};
}

// 6. Distance sweep at N = 500 with the desk preset.
Outcome distance_trend() {
  const ExperimentConfig cfg = load_preset("ci");
  const auto records = pretrain_and_sweep(cfg, fresh_dir("ci"));
  const std::string target = cfg.targets[0].label;
  const DistanceTrends t = distance_trends(records, target, 500);
  const bool a = t.spearman_l2 > 0.5, b = t.finetuned_mean < t.scratch_mean,
             c = t.finetuned_spread < t.pretrained_spread;
  return {a && b && c && t.priors == 15 && cfg.seeds.size() >= 3,
          std::to_string(t.priors) + " priors x " + std::to_string(cfg.seeds.size()) + " seeds: (a) spearman " +
              fmt("%.3f", t.spearman_l2) + (a ? " > 0.5" : " <= 0.5") + "; (b) finetuned " +
              fmt("%.4f", t.finetuned_mean) + (b ? " < " : " >= ") + "scratch " + fmt("%.4f", t.scratch_mean) +
              "; (c) spread finetuned " + fmt("%.4f", t.finetuned_spread) + (c ? " < " : " >= ") + "pretrained " +
              fmt("%.4f", t.pretrained_spread)};
}

// 7. Sample-size sweep over the four fixed pretraining mixtures.
Outcome sample_size_trend() {
  ExperimentConfig cfg = parse_config(R"({
    "extends": "ci",
    "name": "acc-fig4",
    "sweep": "n",
    "random_pretrain": null,
    "pretrain_priors": [
      {"label": "gmm-0-2-4", "prior": {"type": "gmm", "means": [0, 2, 4]}},
      {"label": "gmm-1-1-1", "prior": {"type": "gmm", "means": [1, 1, 1]}},
      {"label": "gmm-0-0-1.3542", "prior": {"type": "gmm", "means": [0, 0, 1.3542]}},
      {"label": "gmm-5-5-5", "prior": {"type": "gmm", "means": [5, 5, 5]}}
    ],
    "n_grid": [10, 100, 300, 700],
    "variants": ["oracle", "pretrained", "finetuned"],
    "seeds": [1, 2, 3, 4, 5]
  })");
  const auto records = pretrain_and_sweep(cfg, fresh_dir("fig4"));
  const std::string target = cfg.targets[0].label;
  const std::size_t lo = cfg.n_grid.front(), hi = cfg.n_grid.back();
  bool pass = true;
  std::string detail;
  for (const auto& lp : cfg.pretrain_priors) {
    double dist = 0.0;
    for (const auto& r : records)
      if (r.pretrain == lp.label && r.l2_distance) dist = *r.l2_distance;
    const double f_lo = seed_mean(records, target, lp.label, lo, Variant::finetuned);
    const double f_hi = seed_mean(records, target, lp.label, hi, Variant::finetuned);
    const double pre = seed_mean(records, target, lp.label, hi, Variant::pretrained);
    const bool ok = f_hi < f_lo && (dist <= 3.0 || f_hi < pre);
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + lp.label + " (l2 " + fmt("%.2f", dist) + "): N=" + std::to_string(hi) +
              " " + fmt("%.4f", f_hi) + " vs N=" + std::to_string(lo) + " " + fmt("%.4f", f_lo) + ", pretrained " +
              fmt("%.4f", pre) + (ok ? "" : " [fails]");
  }
  return {pass, detail};
}

// 8. Pretraining on the target itself.
Outcome zero_gap() {
  ExperimentConfig cfg = parse_config(R"({
    "extends": "ci",
    "name": "acc-zero-gap",
    "random_pretrain": null,
    "pretrain_priors": [{"label": "gmm-1-3-4", "prior": {"type": "gmm", "means": [1, 3, 4]}}],
    "variants": ["oracle", "pretrained"],
    "seeds": [1, 2, 3, 4, 5]
  })");
  const fs::path dir = fresh_dir("zero-gap");
  cfg.output_dir = dir;
  run_pretrain(cfg, dir);
  const Model model = load_pretrained(cfg, dir, 0);
  double est = 0.0, bayes = 0.0;
  const auto instances = build_instances(cfg);
  for (const auto& inst : instances) {
    est += evaluate_model(cfg, inst, model).mse_vs_oracle / double(instances.size());
    double s = 0.0;
    for (std::size_t j = 0; j < inst.test.size(); ++j) {
      const double e = inst.oracle_test[j] - inst.test.thetas[j];
      s += e * e;
    }
    bayes += s / double(inst.test.size()) / double(instances.size());
  }
  return {est <= 0.1 * bayes, "estimation error " + fmt("%.5f", est) + " vs 0.1 x oracle MSE " +
                                  fmt("%.5f", 0.1 * bayes) + " (ratio " + fmt("%.3f", est / bayes) + ")"};
}

ExperimentConfig neural_config() {
  return parse_config(R"({
    "extends": "ci",
    "name": "acc-neural",
    "sweep": "n",
    "target": null,
    "targets": [{"label": "neural", "prior": {"type": "neural", "seed": 1234, "nets": 4, "input_dim": 4, "hidden": 16}}],
    "random_pretrain": null,
    "pretrain_priors": [{"label": "gmm-1-3-4", "prior": {"type": "gmm", "means": [1, 3, 4]}}],
    "n_grid": [1000],
    "variants": ["oracle", "pretrained", "finetuned"],
    "seeds": [1, 2, 3, 4, 5]
  })");
}

// 9. Neural target, N = 1000.
Outcome neural_target() {
  const ExperimentConfig cfg = neural_config();
  const auto records = pretrain_and_sweep(cfg, fresh_dir("neural"));
  const double pre = seed_mean(records, "neural", "gmm-1-3-4", 1000, Variant::pretrained);
  const double fine = seed_mean(records, "neural", "gmm-1-3-4", 1000, Variant::finetuned);
  const double gain = 1.0 - fine / pre;
  return {gain >= 0.2, "pretrained " + fmt("%.4f", pre) + ", finetuned " + fmt("%.4f", fine) + ", improvement " +
                           fmt("%.1f", 100.0 * gain) + "% (need >= 20%)"};
}

// 10. Two complete runs of the same configuration in fresh directories.
Outcome determinism() {
  ExperimentConfig a = neural_config(), b = neural_config();
  a.seeds = b.seeds = {1, 2};
  b.workers = 3;
  const fs::path da = fresh_dir("determinism-a"), db = fresh_dir("determinism-b");
  pretrain_and_sweep(a, da);
  pretrain_and_sweep(b, db);
  const bool csv = slurp(da / "records.csv") == slurp(db / "records.csv");
  const bool manifest = slurp(manifest_path(da)) == slurp(manifest_path(db));
  const bool svg = slurp(da / "report_distance.svg") == slurp(db / "report_distance.svg");
  const bool nonempty = slurp(da / "records.csv").size() > 200;
  return {csv && manifest && svg && nonempty, std::string("records.csv ") + (csv ? "identical" : "differs") +
                                                  ", manifest " + (manifest ? "identical" : "differs") + ", svg " +
                                                  (svg ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Stein identity, exact divergence", stein_identity},
      {"gradients vs finite differences", gradients},
      {"oracle cross-validation", oracles},
      {"Hellinger calibration", hellinger},
      {"architecture invariants", architecture},
      {"distance sweep trends", distance_trend},
      {"sample-size sweep trends", sample_size_trend},
      {"zero domain gap", zero_gap},
      {"neural target finetuning gain", neural_target},
      {"determinism", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      const std::size_t k = std::stoul(arg);
      if (k < 1 || k > criteria.size()) {
        std::cerr << "no criterion " << arg << "\n";
        return 2;
      }
      selected.insert(k);
    }
  }
  std::size_t failed = 0;
  for (std::size_t k = 1; k <= criteria.size(); ++k) {
    if (!selected.empty() && !selected.count(k)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " | " << criteria[k - 1].first << " | "
              << o.detail << " | " << fmt("%.1f", secs) << " s" << std::endl;
  }
  return failed ? 1 : 0;
}
