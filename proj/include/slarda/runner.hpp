#pragma once

// Scenario orchestration: per-seed pretrain -> adapt -> evaluate, ablation
// variants, cross-domain matrices, sensitivity sweeps and the Wilcoxon
// signed-rank test.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include "slarda/config.hpp"

namespace slarda {

enum class Variant { Full, NoSL, NoAR, NoTeacher, SourceOnly };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoSL: return "no_sl";
    case Variant::NoAR: return "no_ar";
    case Variant::NoTeacher: return "no_teacher";
    case Variant::SourceOnly: return "source_only";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "no_sl") return Variant::NoSL;
  if (s == "no_ar") return Variant::NoAR;
  if (s == "no_teacher") return Variant::NoTeacher;
  if (s == "source_only") return Variant::SourceOnly;
  throw ConfigError("unknown variant '" + s + "' (expected full, no_sl, no_ar, no_teacher or source_only)");
}

inline std::vector<Variant> all_variants() {
  return {Variant::Full, Variant::NoSL, Variant::NoAR, Variant::NoTeacher, Variant::SourceOnly};
}

struct ScenarioSpec {
  std::string source;
  std::string target;
  std::string family = "synthetic";
  Variant variant = Variant::Full;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> overrides;  ///< "section.key=value"

  std::string label() const { return source + "->" + target; }

  void validate() const {
    if (source == target) throw ConfigError("scenario: source and target must differ ('" + source + "')");
    if (seeds.empty()) throw ConfigError("scenario " + label() + ": no seeds");
  }
};

struct SeedRecord {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double source_val_acc = 0.0;
  double seconds = 0.0;
};

struct ScenarioResult {
  ScenarioSpec spec;
  std::vector<SeedRecord> runs;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;
  double seconds = 0.0;
  std::string config_hash;
  std::string error;  ///< non-empty when the scenario failed

  bool ok() const { return error.empty(); }
};

/// Mean and sample standard deviation (n - 1); the deviation is 0 for n < 2.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline void aggregate(ScenarioResult& r) {
  std::vector<double> acc, f1;
  for (const auto& s : r.runs) {
    acc.push_back(s.accuracy);
    f1.push_back(s.macro_f1);
  }
  std::tie(r.mean_accuracy, r.std_accuracy) = mean_std(acc);
  std::tie(r.mean_macro_f1, r.std_macro_f1) = mean_std(f1);
}

/// Resolved configuration of a scenario: base config, overrides, variant.
inline ExperimentConfig scenario_config(const ExperimentConfig& base, const ScenarioSpec& spec) {
  ExperimentConfig c = base;
  for (const auto& o : spec.overrides) apply_override(c, o);
  if (c.family != spec.family)
    throw ConfigError("scenario family '" + spec.family + "' does not match config family '" + c.family + "'");
  switch (spec.variant) {
    case Variant::NoSL: c.pretrain.cpc_weight = 0.0; break;
    case Variant::NoAR: c.adapt.discriminator = DiscriminatorKind::Pooled; break;
    case Variant::NoTeacher: c.adapt.lambda = 0.0; break;
    default: break;
  }
  c.source = spec.source;
  c.target = spec.target;
  c.seeds = spec.seeds;
  return c;
}

// ----------------------------------------------------------------- domain data

/// Loads or generates one domain for a run. Synthetic domains are generated
/// from the config with data seed `synthetic.seed + run_seed - 1`; file
/// domains are read from `data_root/<name>`. Splits are 60/20/20 and every
/// domain is z-scored with its own training statistics.
inline DomainDataset load_domain(const ExperimentConfig& c, const std::string& name, std::uint64_t run_seed) {
  if (c.family == "synthetic") {
    for (std::size_t tag = 0; tag < c.synthetic_domains.size(); ++tag) {
      const auto& d = c.synthetic_domains[tag];
      if (d.name != name) continue;
      auto spec = c.synthetic;
      spec.seed = c.synthetic.seed + run_seed - 1;
      spec.shift_magnitude = d.shift_magnitude;
      auto ds = split_dataset(make_synthetic_domain(spec, name, tag, d.shift_magnitude > 0.0), {}, spec.seed + tag);
      const double probe = CentroidProbe(ds, ds.splits.train).accuracy(ds, ds.splits.train);
      if (probe < 95.0)
        throw DataError("synthetic domain '" + name + "' fails the separability self-check (centroid probe " +
                        std::to_string(probe) + "% < 95%); lower noise_level or spread base_frequencies");
      return normalize_domain(std::move(ds));
    }
    std::string known;
    for (const auto& d : c.synthetic_domains) known += (known.empty() ? "" : ", ") + d.name;
    throw ConfigError("unknown synthetic domain '" + name + "' (configured: " + known + ")");
  }
  const auto dir = std::filesystem::path(c.data_root) / name;
  if (!std::filesystem::exists(dir / "manifest.txt"))
    throw DataError("domain directory " + dir.string() +
                    " has no manifest.txt; place the preprocessed recordings there (see README, 'Raw data layout') "
                    "or produce a synthetic stand-in with `slarda_cli generate-synthetic --out " +
                    dir.parent_path().string() + "`");
  auto ds = load_domain_directory(dir);
  return normalize_domain(split_dataset(std::move(ds), {}, run_seed));
}

// -------------------------------------------------------------- pretrain cache

/// Shares pretrained source models between scenarios that agree on every
/// input to pretraining. Thread-safe.
class PretrainCache {
 public:
  std::shared_ptr<const PretrainResult> find(const std::string& key) {
    std::lock_guard lock(mu_);
    auto it = store_.find(key);
    return it == store_.end() ? nullptr : it->second;
  }
  void put(const std::string& key, std::shared_ptr<const PretrainResult> r) {
    std::lock_guard lock(mu_);
    store_.emplace(key, std::move(r));
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const PretrainResult>> store_;
};

inline std::string pretrain_key(const ExperimentConfig& c, std::uint64_t seed) {
  // Only the dataset, model and pretrain settings matter.
  ExperimentConfig k = default_config(c.family);
  k.data_root = c.data_root;
  k.synthetic_domains = c.synthetic_domains;
  k.domains = c.domains;
  k.synthetic = c.synthetic;
  k.arch = c.arch;
  k.pretrain = c.pretrain;
  k.cpc = c.cpc;
  k.source = c.source;
  k.target = "";
  k.seeds = {seed};
  return hex64(fnv1a(canonical_text(k)));
}

struct RunHooks {
  PretrainLogger on_pretrain;
  AdaptLogger on_adapt;
  PretrainCache* cache = nullptr;
  std::function<void(const std::string&)> on_message;
};

/// Pretrains on the source domain of `c` for one seed.
inline std::shared_ptr<const PretrainResult> pretrain_for_seed(const ExperimentConfig& c, const DomainDataset& source,
                                                               std::uint64_t seed, const RunHooks& hooks = {}) {
  const auto key = pretrain_key(c, seed);
  if (hooks.cache)
    if (auto hit = hooks.cache->find(key)) return hit;
  Rng rng(seed);
  ModelBundle bundle(c.arch, rng);
  auto pc = c.pretrain;
  pc.seed = seed;
  auto r = std::make_shared<const PretrainResult>(pretrain_source(std::move(bundle), source, c.cpc, pc, hooks.on_pretrain));
  if (hooks.cache) hooks.cache->put(key, r);
  return r;
}

/// One seed of a scenario: pretrain (or reuse), adapt unless source_only, and
/// evaluate the final model on the target test split.
inline SeedRecord run_seed(const ExperimentConfig& c, Variant variant, std::uint64_t seed, const RunHooks& hooks = {}) {
  const auto start = std::chrono::steady_clock::now();
  const auto source = load_domain(c, c.source, seed);
  auto target = load_domain(c, c.target, seed);
  if (source.num_classes != target.num_classes)
    throw DataError("source '" + source.name + "' and target '" + target.name + "' disagree on the class count");
  auto pre = pretrain_for_seed(c, source, seed, hooks);

  SeedRecord rec;
  rec.seed = seed;
  rec.source_val_acc = pre->best_val_acc;
  EvalMetrics m;
  if (variant == Variant::SourceOnly) {
    ModelBundle model = pre->model;
    m = evaluate(model, target, target.splits.test);
  } else {
    DomainDataset monitor = target;  // labels used for validation monitoring only
    target.labeled = false;
    auto ac = c.adapt;
    ac.seed = seed;
    auto res = adapt_target(pre->model, source, target, ac, hooks.on_adapt, &monitor);
    m = evaluate(res.model, monitor, monitor.splits.test);
  }
  rec.accuracy = m.accuracy;
  rec.macro_f1 = m.macro_f1;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

/// Runs every seed of a scenario. Errors propagate; use run_matrix for
/// failure isolation.
inline ScenarioResult run_scenario(const ScenarioSpec& spec, const ExperimentConfig& base, const RunHooks& hooks = {}) {
  spec.validate();
  const auto c = scenario_config(base, spec);
  ScenarioResult r;
  r.spec = spec;
  r.config_hash = hex64(fnv1a(canonical_text(c) + "variant = " + to_string(spec.variant) + '\n'));
  const auto start = std::chrono::steady_clock::now();
  for (auto seed : spec.seeds) {
    if (hooks.on_message) hooks.on_message(spec.label() + " " + to_string(spec.variant) + " seed " + std::to_string(seed));
    r.runs.push_back(run_seed(c, spec.variant, seed, hooks));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  aggregate(r);
  return r;
}

/// Every ordered (source, target) pair over `domains`: d * (d - 1) specs.
inline std::vector<ScenarioSpec> all_ordered_pairs(const std::vector<std::string>& domains, const std::string& family,
                                                   Variant variant, const std::vector<std::uint64_t>& seeds) {
  std::vector<ScenarioSpec> out;
  for (const auto& s : domains)
    for (const auto& t : domains)
      if (s != t) out.push_back({s, t, family, variant, seeds, {}});
  return out;
}

/// Domain names of the configured family.
inline std::vector<std::string> family_domains(const ExperimentConfig& c) {
  if (c.family != "synthetic") return c.domains;
  std::vector<std::string> out;
  for (const auto& d : c.synthetic_domains) out.push_back(d.name);
  return out;
}

/// Runs scenarios on `workers` threads. A failing scenario records its error
/// and the rest continue. Results keep the order of `specs`.
inline std::vector<ScenarioResult> run_all(const std::vector<ScenarioSpec>& specs, const ExperimentConfig& base,
                                           std::size_t workers, const RunHooks& hooks = {}) {
  std::vector<ScenarioResult> out(specs.size());
  std::atomic<std::size_t> next{0};
  PretrainCache local_cache;
  RunHooks h = hooks;
  if (!h.cache) h.cache = &local_cache;
  auto work = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        out[i] = run_scenario(specs[i], base, h);
      } catch (const std::exception& e) {
        out[i].spec = specs[i];
        out[i].error = e.what();
        if (h.on_message) h.on_message("scenario " + specs[i].label() + " failed: " + e.what());
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, specs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

struct MatrixTable {
  std::vector<std::string> scenarios;  ///< column labels, "S->T"
  std::vector<std::string> methods;    ///< row labels (variants)
  /// cells[row][col]: mean accuracy, NaN for a failed scenario
  std::vector<std::vector<double>> cells;
  std::vector<double> average;  ///< per row, over the successful cells
  std::vector<ScenarioResult> results;
};

/// Table of mean target accuracy: one row per variant present in `specs`,
/// one column per scenario, plus the Average column.
inline MatrixTable run_matrix(const std::vector<ScenarioSpec>& specs, const ExperimentConfig& base,
                              std::size_t workers = 1, const RunHooks& hooks = {}) {
  if (specs.empty()) throw ConfigError("run_matrix: no scenarios");
  MatrixTable t;
  t.results = run_all(specs, base, workers, hooks);
  std::map<std::string, std::size_t> col, row;
  for (const auto& s : specs) {
    if (!col.count(s.label())) {
      col[s.label()] = t.scenarios.size();
      t.scenarios.push_back(s.label());
    }
    const auto v = to_string(s.variant);
    if (!row.count(v)) {
      row[v] = t.methods.size();
      t.methods.push_back(v);
    }
  }
  t.cells.assign(t.methods.size(), std::vector<double>(t.scenarios.size(), std::nan("")));
  for (const auto& r : t.results)
    if (r.ok()) t.cells[row[to_string(r.spec.variant)]][col[r.spec.label()]] = r.mean_accuracy;
  for (const auto& cells : t.cells) {
    double s = 0.0;
    std::size_t n = 0;
    for (double v : cells)
      if (!std::isnan(v)) {
        s += v;
        ++n;
      }
    t.average.push_back(n ? s / static_cast<double>(n) : std::nan(""));
  }
  return t;
}

// ---------------------------------------------------------------------- sweeps

enum class SweepParameter { Lambda, Zeta };

inline SweepParameter sweep_parameter_from_string(const std::string& s) {
  if (s == "lambda") return SweepParameter::Lambda;
  if (s == "zeta") return SweepParameter::Zeta;
  throw ConfigError("sweep parameter must be 'lambda' or 'zeta', got '" + s + "'");
}

inline std::string to_string(SweepParameter p) { return p == SweepParameter::Lambda ? "lambda" : "zeta"; }

/// Checks sortedness and the legal range of every value; throws before any
/// run starts.
inline void validate_sweep(SweepParameter p, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep: no values");
  const double lo = p == SweepParameter::Lambda ? 0.0001 : 0.1;
  const double hi = p == SweepParameter::Lambda ? 1.0 : 0.99;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= lo && values[i] <= hi)) {
      std::ostringstream os;
      os << "sweep: " << to_string(p) << " = " << values[i] << " outside [" << lo << ", " << hi << "]";
      throw ConfigError(os.str());
    }
    if (i && values[i] < values[i - 1]) throw ConfigError("sweep: values must be sorted ascending");
  }
}

struct SweepPoint {
  double value = 0.0;
  ScenarioResult result;
};

inline std::vector<SweepPoint> sensitivity_sweep(const ScenarioSpec& base_spec, const ExperimentConfig& base,
                                                 SweepParameter p, const std::vector<double>& values,
                                                 std::size_t workers = 1, const RunHooks& hooks = {}) {
  validate_sweep(p, values);
  std::vector<ScenarioSpec> specs;
  for (double v : values) {
    auto s = base_spec;
    std::ostringstream os;
    os.precision(17);
    os << "adapt." << to_string(p) << '=' << v;
    s.overrides.push_back(os.str());
    specs.push_back(std::move(s));
  }
  auto results = run_all(specs, base, workers, hooks);
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!results[i].ok()) throw Error("sweep point " + std::to_string(values[i]) + " failed: " + results[i].error);
    out.push_back({values[i], std::move(results[i])});
  }
  return out;
}

// -------------------------------------------------------------------- Wilcoxon

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;   ///< rank sum of positive differences
  double w_minus = 0.0;  ///< rank sum of negative differences
  double statistic = 0.0;  ///< min(W+, W-)
  std::size_t n = 0;       ///< non-zero differences
  bool exact = false;
};

/// Average ranks (1-based) of `v`, ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Two-sided Wilcoxon signed-rank test of paired scores. Zero differences are
/// dropped; the null distribution is exact for n <= 12 (enumerated over sign
/// patterns, ties included) and normal with tie correction above.
inline WilcoxonResult wilcoxon_significance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: paired samples differ in length");
  if (a.size() < 5) throw ConfigError("wilcoxon: need at least 5 pairs, got " + std::to_string(a.size()));
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  if (d.empty()) throw UndefinedTestError("wilcoxon: all paired differences are zero; the test is undefined");

  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::fabs(d[i]);
  const auto ranks = average_ranks(mag);
  WilcoxonResult r;
  r.n = d.size();
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (r.n <= 12) {
    // Doubled average ranks are integers; count sign patterns per W+ value.
    std::vector<long> twice(r.n);
    long total = 0;
    for (std::size_t i = 0; i < r.n; ++i) total += twice[i] = std::lround(2.0 * ranks[i]);
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (long t : twice)
      for (long s = total; s >= t; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - t)];
    const double patterns = std::ldexp(1.0, static_cast<int>(r.n));
    const long w = std::lround(2.0 * r.w_plus);
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s <= w) lower += count[static_cast<std::size_t>(s)];
      if (s >= w) upper += count[static_cast<std::size_t>(s)];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
    r.exact = true;
    return r;
  }
  const double n = static_cast<double>(r.n);
  double tie_term = 0.0;
  {
    auto sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (r.w_plus - mean) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
  return r;
}

}  // namespace slarda
