// Command-line front end: data generation, pretraining, adaptation,
// evaluation, and the experiment runners.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "slarda/slarda.hpp"

namespace fs = std::filesystem;
using namespace slarda;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 0;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? default_config("synthetic") : load_config(g.config);
  for (const auto& o : g.overrides) apply_override(c, o);
  if (g.seed) c.seeds = {*g.seed};
  if (g.workers) c.workers = g.workers;
  return c;
}

fs::path require_out(const Globals& g, const std::string& cmd) {
  if (g.out.empty()) throw ConfigError(cmd + ": --out is required");
  fs::create_directories(g.out);
  return g.out;
}

/// A domain argument is either a directory with manifest.txt or a domain name
/// from the config.
DomainDataset domain_ref(const ExperimentConfig& c, const std::string& ref, std::uint64_t seed) {
  if (fs::exists(fs::path(ref) / "manifest.txt"))
    return normalize_domain(split_dataset(load_domain_directory(ref), {}, seed));
  return load_domain(c, ref, seed);
}

void print_table(const MatrixTable& t) { std::cout << format_table(t); }

void write_run_outputs(const fs::path& out, const MatrixTable& t, const std::string& title) {
  std::ofstream rec(out / "records.csv");
  write_records(rec, t.results);
  write_text(out / "summary.json", to_json(t).dump(2) + "\n");
  write_text(out / "table.txt", format_table(t));
  write_text(out / "accuracy.svg", svg_bar_chart(t, title));
}

RunHooks console_hooks() {
  RunHooks h;
  h.on_message = [](const std::string& m) { std::cerr << "[slarda] " << m << '\n'; };
  return h;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLARDA time-series unsupervised domain adaptation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (INI)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "run a single seed instead of the configured list");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--workers", g.workers, "parallel scenario workers");
  app.add_option("--set", g.overrides, "override a config value: section.key=value (repeatable)");

  // generate-synthetic
  auto* gen = app.add_subcommand("generate-synthetic", "write the configured synthetic domains in the raw layout");
  std::string spec_file;
  gen->add_option("--spec", spec_file, "synthetic spec file (key = value); overrides the config's [dataset] keys")
      ->check(CLI::ExistingFile);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "supervised + contrastive pretraining on the source domain");
  std::string pre_source;
  pre->add_option("--source", pre_source, "source domain (name or directory); default: config source");

  // adapt
  auto* ad = app.add_subcommand("adapt", "adversarial adaptation of a pretrained source checkpoint");
  std::string ad_ckpt, ad_source, ad_target, ad_monitor;
  ad->add_option("--source-ckpt", ad_ckpt, "checkpoint written by pretrain")->required();
  ad->add_option("--source", ad_source, "source domain (name or directory); default: config source");
  ad->add_option("--target", ad_target, "target domain (name or directory); default: config target");
  bool ad_no_monitor = false;
  ad->add_flag("--no-monitor", ad_no_monitor, "skip target validation accuracy in the metrics log");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "accuracy and macro-F1 of a checkpoint on a domain split");
  std::string ev_ckpt, ev_domain, ev_split = "test";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--domain", ev_domain, "domain (name or directory); default: config target");
  ev->add_option("--split", ev_split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));

  // matrix
  auto* mx = app.add_subcommand("matrix", "all ordered source->target pairs of the dataset family");
  std::vector<std::string> mx_variants{"full"};
  mx->add_option("--variants", mx_variants, "variants to run (full, no_sl, no_ar, no_teacher, source_only)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "every variant on the configured source->target scenario");
  std::string ab_source, ab_target;
  ab->add_option("--source", ab_source, "source domain name; default: config source");
  ab->add_option("--target", ab_target, "target domain name; default: config target");

  // sweep
  auto* sw = app.add_subcommand("sweep", "sensitivity sweep over lambda or zeta");
  std::string sw_param;
  std::vector<double> sw_values;
  std::string sw_variant = "full";
  sw->add_option("--param", sw_param, "lambda or zeta")->required()->check(CLI::IsMember({"lambda", "zeta"}));
  sw->add_option("--values", sw_values, "sorted values")->required()->delimiter(',');
  sw->add_option("--variant", sw_variant, "variant of the base scenario");

  // significance
  auto* sg = app.add_subcommand("significance", "two-sided Wilcoxon signed-rank test of paired scores");
  std::string sg_results, sg_a, sg_b;
  std::vector<double> sg_x, sg_y;
  sg->add_option("--results", sg_results, "records.csv; scores are per-scenario means over seeds");
  sg->add_option("--method-a", sg_a, "variant A (with --results)");
  sg->add_option("--method-b", sg_b, "variant B (with --results)");
  sg->add_option("--a", sg_x, "paired scores A")->delimiter(',');
  sg->add_option("--b", sg_y, "paired scores B")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto c = resolve_config(g);
      if (c.family != "synthetic") throw ConfigError("generate-synthetic: config family must be synthetic");
      if (!spec_file.empty()) apply_synthetic_keys(c.synthetic, read_key_values(spec_file));
      const auto out = require_out(g, "generate-synthetic");
      const auto seed = c.seeds.front();
      for (std::size_t tag = 0; tag < c.synthetic_domains.size(); ++tag) {
        const auto& d = c.synthetic_domains[tag];
        auto spec = c.synthetic;
        spec.seed = c.synthetic.seed + seed - 1;
        spec.shift_magnitude = d.shift_magnitude;
        const auto ds = make_synthetic_domain(spec, d.name, tag, d.shift_magnitude > 0.0);
        write_domain_directory(out / d.name, ds);
        write_text(out / d.name / "spec.txt", format_synthetic_spec(spec));
        std::cout << "wrote " << ds.size() << " samples to " << (out / d.name).string() << '\n';
      }
      return 0;
    }

    if (*pre) {
      auto c = resolve_config(g);
      const auto out = require_out(g, "pretrain");
      const auto seed = c.seeds.front();
      if (!pre_source.empty()) c.source = pre_source;
      const auto source = domain_ref(c, c.source, seed);
      std::ofstream log(out / "metrics.tsv");
      log << "epoch\tsup_loss\tcpc_loss\tval_acc\n";
      Rng rng(seed);
      auto arch = c.arch;
      arch.encoder.input_channels = source.channels();
      arch.input_length = source.length();
      arch.num_classes = source.num_classes;
      ModelBundle bundle(arch, rng);
      auto pc = c.pretrain;
      pc.seed = seed;
      auto r = pretrain_source(std::move(bundle), source, c.cpc, pc, [&](const PretrainEpoch& e) {
        log << e.epoch << '\t' << e.sup_loss << '\t' << e.cpc_loss << '\t' << e.val_acc << '\n';
        std::cout << "epoch " << e.epoch << "  sup_loss " << e.sup_loss << "  cpc_loss " << e.cpc_loss << "  val_acc "
                  << e.val_acc << '\n';
      });
      save_checkpoint(out, r.model, canonical_text(c));
      std::cout << "best epoch " << r.best_epoch << " (val_acc " << r.best_val_acc << "), " << r.seconds
                << " s; checkpoint in " << out.string() << '\n';
      return 0;
    }

    if (*ad) {
      auto c = resolve_config(g);
      const auto out = require_out(g, "adapt");
      const auto seed = c.seeds.front();
      auto model = load_checkpoint(ad_ckpt, "slarda_cli pretrain --out " + ad_ckpt);
      const auto source = domain_ref(c, ad_source.empty() ? c.source : ad_source, seed);
      auto target = domain_ref(c, ad_target.empty() ? c.target : ad_target, seed);
      DomainDataset monitor = target;
      target.labeled = false;
      std::ofstream log(out / "metrics.tsv");
      log << "iter\tL_D\tL_adv\tL_ca\tretained_pseudo_fraction\tmean_confidence\ttarget_val_acc_monitor_only\n";
      auto ac = c.adapt;
      ac.seed = seed;
      if (!ac.eval_every) ac.eval_every = 100;
      const bool monitored = !ad_no_monitor && monitor.labeled;
      auto r = adapt_target(model, source, target, ac, [&](const AdaptIteration& it) {
        log << it.iter << '\t' << it.disc_loss << '\t' << it.adv_loss << '\t' << it.ca_loss << '\t'
            << it.retained_fraction << '\t' << it.mean_confidence << '\t';
        if (it.target_val_acc >= 0) log << it.target_val_acc;
        log << '\n';
        if (it.target_val_acc >= 0)
          std::cout << "iter " << it.iter << "  L_D " << it.disc_loss << "  L_adv " << it.adv_loss << "  L_ca "
                    << it.ca_loss << "  retained " << it.retained_fraction
                    << "  target_val_acc (monitoring only) " << it.target_val_acc << '\n';
      }, monitored ? &monitor : nullptr);
      save_checkpoint(out / "target", r.model, canonical_text(c));
      save_checkpoint(out / "teacher", r.teacher.model, canonical_text(c));
      std::cout << "adapted in " << r.seconds << " s; target checkpoint in " << (out / "target").string()
                << ", teacher in " << (out / "teacher").string() << '\n';
      return 0;
    }

    if (*ev) {
      auto c = resolve_config(g);
      auto model = load_checkpoint(ev_ckpt);
      const auto ds = domain_ref(c, ev_domain.empty() ? c.target : ev_domain, c.seeds.front());
      std::vector<std::size_t> idx;
      if (ev_split == "train") idx = ds.splits.train;
      else if (ev_split == "val") idx = ds.splits.val;
      else if (ev_split == "test") idx = ds.splits.test;
      else {
        idx.resize(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
      }
      const auto m = evaluate(model, ds, idx);
      std::cout << "domain " << ds.name << " split " << ev_split << " (" << idx.size() << " samples): accuracy "
                << m.accuracy << "%, macro-F1 " << m.macro_f1 << "%\n";
      if (!g.out.empty()) {
        nlohmann::json j{{"domain", ds.name}, {"split", ev_split}, {"samples", idx.size()},
                         {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"role", to_string(model.role)}};
        write_text(fs::path(g.out) / "evaluation.json", j.dump(2) + "\n");
      }
      return 0;
    }

    if (*mx) {
      const auto c = resolve_config(g);
      const auto out = require_out(g, "matrix");
      std::vector<ScenarioSpec> specs;
      for (const auto& v : mx_variants) {
        auto s = all_ordered_pairs(family_domains(c), c.family, variant_from_string(v), c.seeds);
        specs.insert(specs.end(), s.begin(), s.end());
      }
      const auto t = run_matrix(specs, c, c.workers, console_hooks());
      print_table(t);
      write_run_outputs(out, t, "Target accuracy (" + c.family + ")");
      return 0;
    }

    if (*ab) {
      const auto c = resolve_config(g);
      const auto out = require_out(g, "ablate");
      std::vector<ScenarioSpec> specs;
      for (auto v : all_variants())
        specs.push_back({ab_source.empty() ? c.source : ab_source, ab_target.empty() ? c.target : ab_target, c.family,
                         v, c.seeds, {}});
      const auto t = run_matrix(specs, c, c.workers, console_hooks());
      print_table(t);
      write_run_outputs(out, t, "Ablation (" + c.family + ")");
      return 0;
    }

    if (*sw) {
      const auto c = resolve_config(g);
      const auto out = require_out(g, "sweep");
      const auto p = sweep_parameter_from_string(sw_param);
      ScenarioSpec base{c.source, c.target, c.family, variant_from_string(sw_variant), c.seeds, {}};
      const auto pts = sensitivity_sweep(base, c, p, sw_values, c.workers, console_hooks());
      std::ofstream csv(out / "sweep.csv");
      csv << std::setprecision(17) << to_string(p) << ",mean_accuracy,std_accuracy,mean_macro_f1,std_macro_f1\n";
      Series s{"accuracy", {}, {}};
      std::vector<ScenarioResult> results;
      nlohmann::json j;
      for (const auto& pt : pts) {
        csv << pt.value << ',' << pt.result.mean_accuracy << ',' << pt.result.std_accuracy << ','
            << pt.result.mean_macro_f1 << ',' << pt.result.std_macro_f1 << '\n';
        std::cout << to_string(p) << " = " << pt.value << ": " << pt.result.mean_accuracy << " +- "
                  << pt.result.std_accuracy << '\n';
        s.x.push_back(pt.value);
        s.y.push_back(pt.result.mean_accuracy);
        results.push_back(pt.result);
        auto e = to_json(pt.result);
        e["value"] = pt.value;
        j["points"].push_back(e);
      }
      j["parameter"] = to_string(p);
      std::ofstream rec(out / "records.csv");
      write_records(rec, results);
      write_text(out / "summary.json", j.dump(2) + "\n");
      write_text(out / "sweep.svg", svg_line_plot({s}, "Sensitivity to " + to_string(p), to_string(p),
                                                  "target accuracy (%)", p == SweepParameter::Lambda));
      return 0;
    }

    if (*sg) {
      std::vector<double> a = sg_x, b = sg_y;
      if (!sg_results.empty()) {
        if (sg_a.empty() || sg_b.empty()) throw ConfigError("significance: --results needs --method-a and --method-b");
        std::map<std::string, std::vector<double>> ma, mb;
        for (const auto& r : read_records(sg_results)) {
          if (r.variant == sg_a) ma[r.scenario].push_back(r.accuracy);
          if (r.variant == sg_b) mb[r.scenario].push_back(r.accuracy);
        }
        a.clear();
        b.clear();
        for (const auto& [scenario, va] : ma) {
          auto it = mb.find(scenario);
          if (it == mb.end()) continue;
          a.push_back(mean_std(va).first);
          b.push_back(mean_std(it->second).first);
        }
      }
      const auto w = wilcoxon_significance(a, b);
      std::cout << "n = " << w.n << " (non-zero pairs), W+ = " << w.w_plus << ", W- = " << w.w_minus
                << ", p = " << w.p_value << (w.exact ? " (exact)" : " (normal approximation)") << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
