#pragma once

// Time-series ingestion: missing-value interpolation, sliding windows,
// resampling, seeded splits, per-domain normalization, the synthetic
// domain-shift generator, and the on-disk raw-domain loader.

#include <algorithm>
#include <array>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slarda/tensor.hpp"

namespace slarda {

/// One multichannel window [channels x time steps] with an optional label.
struct TimeSeriesSample {
  Tensor values;
  std::optional<int> label;

  std::size_t channels() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
};

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// A named domain. `labeled == false` marks a domain whose labels must not be
/// used for training; the labels may still be present for evaluation.
struct DomainDataset {
  std::string name;
  std::vector<TimeSeriesSample> samples;
  Splits splits;
  std::size_t num_classes = 0;
  bool labeled = true;

  std::size_t size() const { return samples.size(); }
  std::size_t channels() const { return samples.empty() ? 0 : samples.front().channels(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().length(); }

  /// Checks the type invariants; throws DataError on violation.
  void validate() const {
    if (samples.empty()) throw DataError("domain '" + name + "' has no samples");
    const auto m = channels(), k = length();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.values.rank() != 2 || s.channels() != m || s.length() != k)
        throw DataError("domain '" + name + "': sample " + std::to_string(i) + " has shape " +
                        to_string(s.values.shape) + ", expected [" + std::to_string(m) + "x" + std::to_string(k) +
                        "]");
      if (!s.values.all_finite()) throw DataError("domain '" + name + "': sample " + std::to_string(i) + " not finite");
      if (labeled && (!s.label || *s.label < 0 || static_cast<std::size_t>(*s.label) >= num_classes))
        throw DataError("domain '" + name + "': sample " + std::to_string(i) + " has no valid label");
    }
    const std::size_t total = splits.train.size() + splits.val.size() + splits.test.size();
    if (total == 0) return;
    std::vector<char> seen(samples.size(), 0);
    for (const auto* part : {&splits.train, &splits.val, &splits.test})
      for (auto i : *part) {
        if (i >= samples.size() || seen[i]) throw DataError("domain '" + name + "': splits overlap or out of range");
        seen[i] = 1;
      }
    if (total != samples.size()) throw DataError("domain '" + name + "': splits do not cover all samples");
  }
};

// -------------------------------------------------------------------- windowing

struct WindowingSpec {
  std::size_t window_size = 128;
  std::size_t stride = 64;
  bool interpolate_missing = true;
};

/// Replaces NaN entries of each channel by linear interpolation between the
/// nearest finite neighbours; leading/trailing gaps take the nearest value.
inline Tensor interpolate_missing(const Tensor& series, const std::string& recording = "series") {
  if (series.rank() != 2) throw ShapeError("interpolate_missing: expected [channels x time]");
  Tensor out = series;
  const auto M = series.dim(0), L = series.dim(1);
  for (std::size_t c = 0; c < M; ++c) {
    double* row = out.data.data() + c * L;
    std::vector<std::size_t> finite;
    for (std::size_t t = 0; t < L; ++t) {
      if (std::isinf(row[t])) throw DataError(recording + ": infinite value in channel " + std::to_string(c));
      if (!std::isnan(row[t])) finite.push_back(t);
    }
    if (finite.empty()) throw DataError(recording + ": channel " + std::to_string(c) + " has no finite values");
    if (finite.size() == L) continue;
    for (std::size_t t = 0; t < finite.front(); ++t) row[t] = row[finite.front()];
    for (std::size_t t = finite.back() + 1; t < L; ++t) row[t] = row[finite.back()];
    for (std::size_t i = 0; i + 1 < finite.size(); ++i) {
      const auto a = finite[i], b = finite[i + 1];
      for (std::size_t t = a + 1; t < b; ++t) {
        const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
        row[t] = (1.0 - w) * row[a] + w * row[b];
      }
    }
  }
  return out;
}

/// Number of windows produced for a recording of length `len`.
inline std::size_t window_count(std::size_t len, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0 || len < window) return 0;
  return (len - window) / stride + 1;
}

/// Label of a window by majority vote over the per-step label track; ties go
/// to the smallest class index.
inline int majority_label(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  int best = counts.begin()->first;
  std::size_t best_n = 0;
  for (auto [l, n] : counts)
    if (n > best_n) {
      best = l;
      best_n = n;
    }
  return best;
}

inline std::vector<TimeSeriesSample> segment_sliding_window(const Tensor& series, const WindowingSpec& spec,
                                                            std::optional<std::span<const int>> label_track = {},
                                                            const std::string& recording = "series") {
  if (series.rank() != 2) throw ShapeError(recording + ": expected [channels x time]");
  if (spec.window_size == 0 || spec.stride == 0) throw ConfigError("window_size and stride must be positive");
  const auto M = series.dim(0), L = series.dim(1);
  if (L < spec.window_size)
    throw DataError(recording + ": length " + std::to_string(L) + " shorter than window " +
                    std::to_string(spec.window_size) + " (empty input)");
  if (label_track && label_track->size() != L)
    throw DataError(recording + ": label track length " + std::to_string(label_track->size()) +
                    " does not match series length " + std::to_string(L));
  const Tensor clean = spec.interpolate_missing ? interpolate_missing(series, recording) : series;
  if (!clean.all_finite()) throw DataError(recording + ": non-finite values");

  const auto n = window_count(L, spec.window_size, spec.stride);
  const auto W = spec.window_size;
  std::vector<TimeSeriesSample> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const auto off = w * spec.stride;
    TimeSeriesSample s{Tensor({M, W}), std::nullopt};
    for (std::size_t c = 0; c < M; ++c)
      std::copy_n(clean.data.data() + c * L + off, W, s.values.data.data() + c * W);
    if (label_track) s.label = majority_label(label_track->subspan(off, W));
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------- resampling

/// Linear interpolation onto `target_len` uniformly spaced points spanning the
/// same interval; first and last values are preserved.
inline Tensor resample_to_length(const Tensor& series, std::size_t target_len) {
  if (series.rank() != 2) throw ShapeError("resample_to_length: expected [channels x time]");
  const auto M = series.dim(0), L = series.dim(1);
  if (L == 0 || target_len == 0) throw DataError("resample_to_length: lengths must be positive");
  if (!series.all_finite()) throw DataError("resample_to_length: non-finite input");
  if (L == target_len) return series;
  Tensor out({M, target_len});
  for (std::size_t c = 0; c < M; ++c) {
    const double* src = series.data.data() + c * L;
    double* dst = out.data.data() + c * target_len;
    if (L == 1) {
      std::fill_n(dst, target_len, src[0]);
      continue;
    }
    if (target_len == 1) {
      dst[0] = src[0];
      continue;
    }
    const double step = static_cast<double>(L - 1) / static_cast<double>(target_len - 1);
    for (std::size_t i = 0; i < target_len; ++i) {
      if (i == target_len - 1) {
        dst[i] = src[L - 1];
        continue;
      }
      const double pos = static_cast<double>(i) * step;
      const auto j = std::min(static_cast<std::size_t>(pos), L - 2);
      const double w = pos - static_cast<double>(j);
      dst[i] = (1.0 - w) * src[j] + w * src[j + 1];
    }
  }
  return out;
}

// ----------------------------------------------------------------------- splits

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Seeded shuffle, floor allocation for val/test, remainder to train.
inline DomainDataset split_dataset(DomainDataset ds, SplitRatios r, std::uint64_t seed) {
  if (r.train <= 0 || r.val <= 0 || r.test <= 0) throw ConfigError("split ratios must be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const auto n = ds.samples.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto nd = static_cast<double>(n);
  auto n_train = static_cast<std::size_t>(std::floor(r.train * nd + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(r.val * nd + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(r.test * nd + 1e-9));
  n_train += n - (n_train + n_val + n_test);
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw DataError("domain '" + ds.name + "': split of " + std::to_string(n) + " samples leaves an empty split");

  ds.splits.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.splits.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                       perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.splits.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return ds;
}

// ---------------------------------------------------------------- normalization

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats channel_stats(const DomainDataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("channel_stats: no samples");
  const auto M = ds.channels(), K = ds.length();
  ChannelStats st{std::vector<double>(M, 0.0), std::vector<double>(M, 0.0)};
  const double n = static_cast<double>(indices.size() * K);
  for (auto i : indices)
    for (std::size_t c = 0; c < M; ++c)
      for (std::size_t t = 0; t < K; ++t) st.mean[c] += ds.samples[i].values.at(c, t);
  for (auto& m : st.mean) m /= n;
  for (auto i : indices)
    for (std::size_t c = 0; c < M; ++c)
      for (std::size_t t = 0; t < K; ++t) {
        const double d = ds.samples[i].values.at(c, t) - st.mean[c];
        st.stddev[c] += d * d;
      }
  for (auto& s : st.stddev) s = std::max(std::sqrt(s / n), 1e-12);
  return st;
}

/// Per-channel z-score of every sample using the domain's own training-split statistics.
inline DomainDataset normalize_domain(DomainDataset ds) {
  const auto& idx = ds.splits.train.empty() ? std::vector<std::size_t>{} : ds.splits.train;
  std::vector<std::size_t> all;
  if (idx.empty()) {
    all.resize(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
  }
  const auto st = channel_stats(ds, idx.empty() ? all : idx);
  const auto K = ds.length();
  for (auto& s : ds.samples)
    for (std::size_t c = 0; c < ds.channels(); ++c)
      for (std::size_t t = 0; t < K; ++t) s.values.at(c, t) = (s.values.at(c, t) - st.mean[c]) / st.stddev[c];
  return ds;
}

/// Stacks the selected samples into a [B x M x K] tensor.
inline Tensor make_batch(const DomainDataset& ds, std::span<const std::size_t> indices) {
  const auto M = ds.channels(), K = ds.length();
  Tensor out({indices.size(), M, K});
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy(ds.samples[indices[b]].values.data.begin(), ds.samples[indices[b]].values.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(b * M * K));
  return out;
}

/// Labels of the selected samples. Refuses unlabeled domains unless
/// `for_evaluation` is set.
inline std::vector<int> batch_labels(const DomainDataset& ds, std::span<const std::size_t> indices,
                                     bool for_evaluation = false) {
  if (!ds.labeled && !for_evaluation)
    throw ProtocolError("domain '" + ds.name + "' is unlabeled; its labels are reserved for evaluation");
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (!ds.samples[i].label) throw DataError("domain '" + ds.name + "': sample " + std::to_string(i) + " has no label");
    out.push_back(*ds.samples[i].label);
  }
  return out;
}

// -------------------------------------------------------- synthetic domain shift

enum class ShiftKind : unsigned { SamplingRate = 1, Frequency = 2, Gain = 4, Noise = 8 };

struct SyntheticShiftSpec {
  std::size_t num_classes = 3;
  std::size_t channels = 1;
  std::size_t length = 512;
  /// Base frequency of each class in cycles per window; empty = evenly spaced.
  std::vector<double> base_frequencies;
  /// Weight of the second harmonic per class (waveform mix); empty = 0.3 for all.
  std::vector<double> harmonic_weights;
  /// Per-class multiplier of the frequency shift; empty = 1 for all.
  std::vector<double> frequency_shift_weights;
  double frequency_jitter = 0.05;  ///< relative, uniform
  double amplitude_jitter = 0.2;   ///< relative, uniform
  double noise_level = 0.3;        ///< additive Gaussian std
  unsigned shift_kinds = static_cast<unsigned>(ShiftKind::Frequency);
  double shift_magnitude = 0.0;
  std::size_t samples_per_class = 200;
  std::uint64_t seed = 1;

  bool has(ShiftKind k) const { return (shift_kinds & static_cast<unsigned>(k)) != 0; }

  double base_frequency(std::size_t c) const {
    if (!base_frequencies.empty()) return base_frequencies.at(c);
    return 4.0 + 4.0 * static_cast<double>(c);
  }
  double harmonic_weight(std::size_t c) const {
    return harmonic_weights.empty() ? 0.3 : harmonic_weights.at(c);
  }
  double shift_weight(std::size_t c) const {
    return frequency_shift_weights.empty() ? 1.0 : frequency_shift_weights.at(c);
  }

  void validate() const {
    if (num_classes < 2 || channels == 0 || length < 2 || samples_per_class == 0)
      throw ConfigError("synthetic spec: need >= 2 classes, >= 1 channel, length >= 2, samples_per_class >= 1");
    for (const auto* v : {&base_frequencies, &harmonic_weights, &frequency_shift_weights})
      if (!v->empty() && v->size() != num_classes)
        throw ConfigError("synthetic spec: per-class lists must have num_classes entries");
    if (shift_magnitude < 0) throw ConfigError("synthetic spec: shift_magnitude must be >= 0");
    if (has(ShiftKind::SamplingRate) && shift_magnitude > 0 &&
        static_cast<double>(length) * (1.0 + shift_magnitude) < 2.0)
      throw ConfigError("synthetic spec: sampling-rate shift too small");
  }
};

/// Named magnitude presets for the frequency shift.
inline double shift_preset(const std::string& name) {
  if (name == "none") return 0.0;
  if (name == "low") return 0.15;
  if (name == "medium") return 0.3;
  if (name == "high") return 0.5;
  throw ConfigError("unknown shift preset '" + name + "'");
}

/// Seed of sample `index` in domain `domain_tag`; lets any sample be regenerated.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t domain_tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(domain_tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Renders one raw sample of class `cls` with `length` steps. Frequencies are
/// in cycles per `spec.length` steps, so a longer rendering covers more cycles.
/// `freq_scale`, `gain`, `offset` and `extra_noise` encode the shift applied.
inline Tensor synthesize_signal(const SyntheticShiftSpec& spec, std::size_t cls, std::size_t length,
                                std::uint64_t seed, double freq_scale = 1.0, double gain = 1.0, double offset = 0.0,
                                double extra_noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double f = spec.base_frequency(cls) * freq_scale * (1.0 + spec.frequency_jitter * unit(rng));
  const double amp = gain * (1.0 + spec.amplitude_jitter * unit(rng));
  const double hw = spec.harmonic_weight(cls);
  const double sigma = spec.noise_level + extra_noise;
  const double w = 2.0 * std::numbers::pi * f / static_cast<double>(spec.length);
  Tensor out({spec.channels, length});
  for (std::size_t c = 0; c < spec.channels; ++c) {
    const double p1 = phase(rng), p2 = phase(rng);
    for (std::size_t t = 0; t < length; ++t) {
      const double x = static_cast<double>(t);
      out.at(c, t) = amp * (std::sin(w * x + p1) + hw * std::sin(2.0 * w * x + p2)) + offset + sigma * noise(rng);
    }
  }
  return out;
}

/// Generates one domain; `shifted` applies the configured shift. Samples are
/// ordered class-major and each uses `sample_seed(spec.seed, domain_tag, i)`.
inline DomainDataset make_synthetic_domain(const SyntheticShiftSpec& spec, const std::string& name,
                                           std::uint64_t domain_tag, bool shifted) {
  spec.validate();
  const double mag = shifted ? spec.shift_magnitude : 0.0;
  DomainDataset ds;
  ds.name = name;
  ds.num_classes = spec.num_classes;
  ds.labeled = true;
  std::size_t idx = 0;
  const std::size_t raw_len =
      spec.has(ShiftKind::SamplingRate) && mag > 0
          ? static_cast<std::size_t>(std::llround(static_cast<double>(spec.length) * (1.0 + mag)))
          : spec.length;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t j = 0; j < spec.samples_per_class; ++j, ++idx) {
      const double fs = spec.has(ShiftKind::Frequency) ? 1.0 + mag * spec.shift_weight(c) : 1.0;
      const double gain = spec.has(ShiftKind::Gain) ? 1.0 + mag : 1.0;
      const double offset = spec.has(ShiftKind::Gain) ? mag : 0.0;
      const double extra = spec.has(ShiftKind::Noise) ? mag : 0.0;
      Tensor raw = synthesize_signal(spec, c, raw_len, sample_seed(spec.seed, domain_tag, idx), fs, gain, offset, extra);
      if (raw_len != spec.length) raw = resample_to_length(raw, spec.length);
      ds.samples.push_back({std::move(raw), static_cast<int>(c)});
    }
  return ds;
}

// --------------------------------------------------------------- centroid probe

/// Phase-invariant features: DFT magnitude of every channel, bins 0..K/2.
inline std::vector<double> spectral_features(const Tensor& values) {
  const auto M = values.dim(0), K = values.dim(1);
  const auto bins = K / 2 + 1;
  std::vector<double> f(M * bins), cs(K), sn(K);
  for (std::size_t t = 0; t < K; ++t) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(K);
    cs[t] = std::cos(ang);
    sn[t] = std::sin(ang);
  }
  for (std::size_t c = 0; c < M; ++c) {
    const double* x = values.data.data() + c * K;
    for (std::size_t b = 0; b < bins; ++b) {
      double re = 0.0, im = 0.0;
      for (std::size_t t = 0, k = 0; t < K; ++t, k = (k + b) % K) {
        re += x[t] * cs[k];
        im += x[t] * sn[k];
      }
      f[c * bins + b] = std::hypot(re, im) / static_cast<double>(K);
    }
  }
  return f;
}

/// Nearest-centroid classifier on spectral features.
class CentroidProbe {
 public:
  CentroidProbe(const DomainDataset& ds, const std::vector<std::size_t>& fit_indices) {
    centroids_.assign(ds.num_classes, {});
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (auto i : fit_indices) {
      const auto f = spectral_features(ds.samples[i].values);
      auto& cen = centroids_[static_cast<std::size_t>(*ds.samples[i].label)];
      if (cen.empty()) cen.assign(f.size(), 0.0);
      for (std::size_t j = 0; j < f.size(); ++j) cen[j] += f[j];
      ++counts[static_cast<std::size_t>(*ds.samples[i].label)];
    }
    for (std::size_t c = 0; c < centroids_.size(); ++c)
      for (auto& v : centroids_[c]) v /= static_cast<double>(std::max<std::size_t>(counts[c], 1));
  }

  int predict(const Tensor& values) const {
    const auto f = spectral_features(values);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids_.size(); ++c) {
      if (centroids_[c].empty()) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < f.size(); ++j) d += (f[j] - centroids_[c][j]) * (f[j] - centroids_[c][j]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  /// Accuracy in percent on the selected samples (labels read for evaluation).
  double accuracy(const DomainDataset& ds, const std::vector<std::size_t>& indices) const {
    if (indices.empty()) return 0.0;
    std::size_t ok = 0;
    for (auto i : indices) ok += predict(ds.samples[i].values) == *ds.samples[i].label;
    return 100.0 * static_cast<double>(ok) / static_cast<double>(indices.size());
  }

 private:
  std::vector<std::vector<double>> centroids_;
};

struct SyntheticPair {
  DomainDataset source;
  DomainDataset target;
  double probe_accuracy = 0.0;  ///< centroid probe on the source training split
};

/// Source (labeled) and target (unlabeled, hidden labels kept for evaluation)
/// domains with 60/20/20 splits. The shift is applied to the target only.
inline SyntheticPair make_synthetic_shift_pair(const SyntheticShiftSpec& spec, const std::string& source_name = "source",
                                               const std::string& target_name = "target") {
  SyntheticPair pair;
  pair.source = split_dataset(make_synthetic_domain(spec, source_name, 0, false), {}, spec.seed);
  pair.target = split_dataset(make_synthetic_domain(spec, target_name, 1, true), {}, spec.seed + 1);
  pair.target.labeled = false;
  CentroidProbe probe(pair.source, pair.source.splits.train);
  pair.probe_accuracy = probe.accuracy(pair.source, pair.source.splits.train);
  if (pair.probe_accuracy < 95.0) {
    std::ostringstream os;
    os << "synthetic generator self-check failed: centroid probe train accuracy " << pair.probe_accuracy
       << "% < 95% (reduce noise_level or separate the class frequencies)";
    throw DataError(os.str());
  }
  return pair;
}

// ------------------------------------------------------------- key=value files

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Reads `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

inline unsigned parse_shift_kinds(const std::string& s) {
  unsigned k = 0;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (tok == "sampling_rate") k |= static_cast<unsigned>(ShiftKind::SamplingRate);
    else if (tok == "frequency") k |= static_cast<unsigned>(ShiftKind::Frequency);
    else if (tok == "gain") k |= static_cast<unsigned>(ShiftKind::Gain);
    else if (tok == "noise") k |= static_cast<unsigned>(ShiftKind::Noise);
    else if (!tok.empty()) throw ConfigError("unknown shift kind '" + tok + "'");
  }
  return k;
}

inline std::string format_shift_kinds(unsigned k) {
  std::vector<std::string> parts;
  if (k & static_cast<unsigned>(ShiftKind::SamplingRate)) parts.push_back("sampling_rate");
  if (k & static_cast<unsigned>(ShiftKind::Frequency)) parts.push_back("frequency");
  if (k & static_cast<unsigned>(ShiftKind::Gain)) parts.push_back("gain");
  if (k & static_cast<unsigned>(ShiftKind::Noise)) parts.push_back("noise");
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

/// Applies synthetic-spec keys from a key/value map onto `spec`.
inline void apply_synthetic_keys(SyntheticShiftSpec& spec, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "num_classes") spec.num_classes = std::stoul(v);
    else if (k == "channels") spec.channels = std::stoul(v);
    else if (k == "length") spec.length = std::stoul(v);
    else if (k == "base_frequencies") spec.base_frequencies = parse_number_list(v);
    else if (k == "harmonic_weights") spec.harmonic_weights = parse_number_list(v);
    else if (k == "frequency_shift_weights") spec.frequency_shift_weights = parse_number_list(v);
    else if (k == "frequency_jitter") spec.frequency_jitter = std::stod(v);
    else if (k == "amplitude_jitter") spec.amplitude_jitter = std::stod(v);
    else if (k == "noise_level") spec.noise_level = std::stod(v);
    else if (k == "shift_kind") spec.shift_kinds = parse_shift_kinds(v);
    else if (k == "shift_magnitude") {
      const bool numeric = !v.empty() && (std::isdigit(static_cast<unsigned char>(v[0])) || v[0] == '.');
      spec.shift_magnitude = numeric ? std::stod(v) : shift_preset(v);
    } else if (k == "samples_per_class") spec.samples_per_class = std::stoul(v);
    else if (k == "seed") spec.seed = std::stoull(v);
    else throw ConfigError("synthetic spec: unknown key '" + k + "'");
  }
}

inline SyntheticShiftSpec load_synthetic_spec(const std::filesystem::path& path) {
  SyntheticShiftSpec spec;
  apply_synthetic_keys(spec, read_key_values(path));
  spec.validate();
  return spec;
}

inline std::string format_synthetic_spec(const SyntheticShiftSpec& s) {
  auto list = [](const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
  };
  std::ostringstream os;
  os << "num_classes = " << s.num_classes << "\nchannels = " << s.channels << "\nlength = " << s.length << '\n';
  if (!s.base_frequencies.empty()) os << "base_frequencies = " << list(s.base_frequencies) << '\n';
  if (!s.harmonic_weights.empty()) os << "harmonic_weights = " << list(s.harmonic_weights) << '\n';
  if (!s.frequency_shift_weights.empty()) os << "frequency_shift_weights = " << list(s.frequency_shift_weights) << '\n';
  os << "frequency_jitter = " << s.frequency_jitter << "\namplitude_jitter = " << s.amplitude_jitter
     << "\nnoise_level = " << s.noise_level << "\nshift_kind = " << format_shift_kinds(s.shift_kinds)
     << "\nshift_magnitude = " << s.shift_magnitude << "\nsamples_per_class = " << s.samples_per_class
     << "\nseed = " << s.seed << '\n';
  return os.str();
}

// ------------------------------------------------------------ raw domain loader

/// Reads one record: `.f32` files are little-endian float32, row-major
/// channel x time; `.csv`/`.txt` files hold one channel per line with comma,
/// tab or space separators ("nan" marks a missing value).
inline Tensor read_record(const std::filesystem::path& path, std::size_t channels) {
  const auto ext = path.extension().string();
  if (ext == ".f32") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % (4 * channels) != 0)
      throw DataError(path.string() + ": size not a multiple of 4 * channels bytes");
    const auto n = bytes.size() / 4;
    Tensor t({channels, n / channels});
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                              (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
      float f;
      std::memcpy(&f, &u, sizeof f);
      t.data[i] = static_cast<double>(f);
    }
    return t;
  }
  if (ext == ".csv" || ext == ".txt" || ext == ".tsv") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::replace(line.begin(), line.end(), '\t', ' ');
      std::istringstream is(line);
      std::vector<double> row;
      std::string tok;
      while (is >> tok) {
        std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
        if (tok == "nan") {
          row.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &used);
        } catch (const std::exception&) {
        }
        if (used == 0 || used != tok.size())
          throw DataError(path.string() + ": row " + std::to_string(rows.size() + 1) + ": not a number '" + tok + "'");
        row.push_back(v);
      }
      rows.push_back(std::move(row));
    }
    if (rows.size() != channels)
      throw DataError(path.string() + ": " + std::to_string(rows.size()) + " rows, expected " + std::to_string(channels) +
                      " channels");
    const auto L = rows.front().size();
    Tensor t({channels, L});
    for (std::size_t c = 0; c < channels; ++c) {
      if (rows[c].size() != L) throw DataError(path.string() + ": ragged channel rows");
      std::copy(rows[c].begin(), rows[c].end(), t.data.begin() + static_cast<std::ptrdiff_t>(c * L));
    }
    return t;
  }
  throw DataError(path.string() + ": unsupported record extension '" + ext + "'");
}

/// Writes a record in the flat binary layout.
inline void write_record_f32(const std::filesystem::path& path, const Tensor& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (double v : series.data) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof u);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

struct DomainManifest {
  std::string name;
  std::size_t channels = 1;
  std::size_t length = 0;  ///< sample length K after windowing/resampling
  std::size_t classes = 0;
  double sampling_rate = 0.0;
  std::size_t window = 0;  ///< 0: records are pre-epoched (window = record length)
  std::size_t stride = 0;
  std::map<std::string, int> record_labels;  ///< whole-record labels (`label.<stem> = c`)
};

inline DomainManifest read_manifest(const std::filesystem::path& dir) {
  const auto kv = read_key_values(dir / "manifest.txt");
  DomainManifest m;
  m.name = dir.filename().string();
  for (const auto& [k, v] : kv) {
    if (k == "name") m.name = v;
    else if (k == "channels") m.channels = std::stoul(v);
    else if (k == "length") m.length = std::stoul(v);
    else if (k == "classes") m.classes = std::stoul(v);
    else if (k == "sampling_rate") m.sampling_rate = std::stod(v);
    else if (k == "window") m.window = std::stoul(v);
    else if (k == "stride") m.stride = std::stoul(v);
    else if (k.rfind("label.", 0) == 0) m.record_labels[k.substr(6)] = std::stoi(v);
  }
  if (m.channels == 0 || m.length == 0 || m.classes == 0)
    throw DataError(dir.string() + "/manifest.txt: channels, length and classes are required");
  return m;
}

/// Loads every record in a domain directory. A record `x.f32` / `x.csv` may be
/// accompanied by `x.labels` (one integer per time step); otherwise a
/// `label.x` manifest entry labels the whole record. Windows are resampled to
/// the manifest length when they differ.
inline DomainDataset load_domain_directory(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  DomainDataset ds;
  ds.name = m.name;
  ds.num_classes = m.classes;
  std::vector<std::filesystem::path> records;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    // other files (manifest, notes, generator specs) are ignored
    if (ext == ".f32" || ext == ".csv") records.push_back(e.path());
  }
  std::sort(records.begin(), records.end());
  if (records.empty()) throw DataError(dir.string() + ": no record files");
  bool all_labeled = true;
  for (const auto& rec : records) {
    const auto stem = rec.stem().string();
    Tensor series = read_record(rec, m.channels);
    std::optional<std::vector<int>> track;
    const auto lpath = rec.parent_path() / (stem + ".labels");
    if (std::filesystem::exists(lpath)) {
      std::ifstream in(lpath);
      std::vector<int> t;
      int v;
      while (in >> v) t.push_back(v);
      track = std::move(t);
    }
    WindowingSpec ws;
    ws.window_size = m.window ? m.window : series.dim(1);
    ws.stride = m.stride ? m.stride : ws.window_size;
    std::optional<std::span<const int>> tspan;
    if (track) tspan = std::span<const int>(*track);
    auto windows = segment_sliding_window(series, ws, tspan, rec.string());
    for (auto& w : windows) {
      if (!w.label) {
        if (auto it = m.record_labels.find(stem); it != m.record_labels.end()) w.label = it->second;
      }
      if (!w.label) all_labeled = false;
      if (w.length() != m.length) w.values = resample_to_length(w.values, m.length);
      ds.samples.push_back(std::move(w));
    }
  }
  ds.labeled = all_labeled;
  return ds;
}

/// Writes a domain in the raw on-disk layout (one `.f32` record per sample,
/// labels in the manifest).
inline void write_domain_directory(const std::filesystem::path& dir, const DomainDataset& ds,
                                   double sampling_rate = 0.0) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  man << "name = " << ds.name << "\nchannels = " << ds.channels() << "\nlength = " << ds.length()
      << "\nclasses = " << ds.num_classes << "\nsampling_rate = " << sampling_rate << '\n';
  const auto width = std::to_string(ds.size()).size();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::string id = std::to_string(i);
    id = "rec" + std::string(width - id.size(), '0') + id;
    write_record_f32(dir / (id + ".f32"), ds.samples[i].values);
    if (ds.samples[i].label) man << "label." << id << " = " << *ds.samples[i].label << '\n';
  }
}

}  // namespace slarda
