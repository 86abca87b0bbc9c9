#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"

using namespace slarda;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slarda_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor ramp(std::size_t channels, std::size_t len) {
  Tensor t({channels, len});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < len; ++i) t.at(c, i) = static_cast<double>(100 * c + i);
  return t;
}

}  // namespace

TEST(Windowing, CountMatchesEnumeration) {
  for (std::size_t L = 1; L <= 64; ++L)
    for (std::size_t w = 1; w <= L + 2; ++w)
      for (std::size_t s = 1; s <= 16; ++s) ASSERT_EQ(window_count(L, w, s), oracle::enumerate_windows(L, w, s)) << L << ' ' << w << ' ' << s;
}

TEST(Windowing, WindowsCopyTheRightOffsets) {
  const auto series = ramp(2, 37);
  WindowingSpec spec{.window_size = 8, .stride = 5, .interpolate_missing = true};
  auto w = segment_sliding_window(series, spec);
  ASSERT_EQ(w.size(), oracle::enumerate_windows(37, 8, 5));
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(w[i].values.shape, (Shape{2, 8}));
    for (std::size_t t = 0; t < 8; ++t) {
      EXPECT_EQ(w[i].values.at(0, t), static_cast<double>(i * 5 + t));
      EXPECT_EQ(w[i].values.at(1, t), static_cast<double>(100 + i * 5 + t));
    }
    EXPECT_FALSE(w[i].label.has_value());
  }
}

TEST(Windowing, ShortInputIsAnError) {
  WindowingSpec spec{.window_size = 16, .stride = 4, .interpolate_missing = true};
  EXPECT_THROW(segment_sliding_window(ramp(1, 10), spec), DataError);
}

TEST(Windowing, MajorityLabelTiesGoToSmallestClass) {
  const std::vector<int> a{2, 2, 1, 1, 0};
  EXPECT_EQ(majority_label(a), 1);
  const std::vector<int> b{3, 3, 3, 0};
  EXPECT_EQ(majority_label(b), 3);
  const std::vector<int> c{4, 1, 4, 1};
  EXPECT_EQ(majority_label(c), 1);
}

TEST(Windowing, LabelTrackVotesPerWindow) {
  const std::vector<int> track{0, 0, 0, 1, 1, 1, 1, 2, 2, 2};
  WindowingSpec spec{.window_size = 4, .stride = 3, .interpolate_missing = true};
  auto w = segment_sliding_window(ramp(1, 10), spec, std::span<const int>(track));
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(*w[0].label, 0);  // 0 0 0 1
  EXPECT_EQ(*w[1].label, 1);  // 1 1 1 1
  EXPECT_EQ(*w[2].label, 2);  // 1 2 2 2
}

TEST(Windowing, MissingValuesAreInterpolated) {
  Tensor s({1, 6}, std::vector<double>{NAN, 1.0, NAN, NAN, 4.0, NAN});
  auto out = interpolate_missing(s);
  const std::vector<double> want{1.0, 1.0, 2.0, 3.0, 4.0, 4.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(out[i], want[i]);
}

TEST(Resampling, LinearSignalIsReproducedExactly) {
  Tensor s({1, 11});
  for (std::size_t i = 0; i < 11; ++i) s[i] = 3.0 + 0.5 * static_cast<double>(i);
  for (std::size_t n : {2u, 5u, 11u, 21u, 64u}) {
    auto r = resample_to_length(s, n);
    ASSERT_EQ(r.shape, (Shape{1, n}));
    for (std::size_t i = 0; i < n; ++i)
      EXPECT_NEAR(r[i], 3.0 + 5.0 * static_cast<double>(i) / static_cast<double>(n - 1), 1e-12);
    EXPECT_EQ(r[0], s[0]);
    EXPECT_EQ(r[n - 1], s[10]);
  }
  EXPECT_EQ(resample_to_length(s, 11), s);
}

TEST(Splits, DeterministicDisjointAndCovering) {
  SyntheticShiftSpec spec;
  spec.length = 32;
  spec.samples_per_class = 17;
  auto ds = make_synthetic_domain(spec, "d", 0, false);
  auto a = split_dataset(ds, {}, 7), b = split_dataset(ds, {}, 7), c = split_dataset(ds, {}, 8);
  EXPECT_EQ(a.splits.train, b.splits.train);
  EXPECT_EQ(a.splits.test, b.splits.test);
  EXPECT_NE(a.splits.train, c.splits.train);
  const auto n = ds.size();  // 51
  EXPECT_EQ(a.splits.val.size(), 10u);
  EXPECT_EQ(a.splits.test.size(), 10u);
  EXPECT_EQ(a.splits.train.size(), n - 20);
  std::set<std::size_t> all(a.splits.train.begin(), a.splits.train.end());
  all.insert(a.splits.val.begin(), a.splits.val.end());
  all.insert(a.splits.test.begin(), a.splits.test.end());
  EXPECT_EQ(all.size(), n);
  EXPECT_NO_THROW(a.validate());
}

TEST(Splits, RejectsBadRatios) {
  DomainDataset ds;
  EXPECT_THROW(split_dataset(ds, {0.5, 0.2, 0.2}, 1), ConfigError);
  EXPECT_THROW(split_dataset(ds, {1.0, 0.0, 0.0}, 1), ConfigError);
}

TEST(Normalization, TrainingSplitIsStandardized) {
  auto p = oracle::micro_pair();
  for (const auto* d : {&p.source, &p.target}) {
    auto st = channel_stats(*d, d->splits.train);
    EXPECT_NEAR(st.mean[0], 0.0, 1e-12);
    EXPECT_NEAR(st.stddev[0], 1.0, 1e-12);
  }
}

TEST(Synthetic, SampleSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 3; ++tag)
    for (std::uint64_t i = 0; i < 2000; ++i) seen.insert(sample_seed(42, tag, i));
  EXPECT_EQ(seen.size(), 6000u);
  EXPECT_NE(sample_seed(1, 0, 0), sample_seed(2, 0, 0));
  EXPECT_EQ(sample_seed(5, 1, 9), sample_seed(5, 1, 9));
}

TEST(Synthetic, SamplesWithinAClassDiffer) {
  SyntheticShiftSpec spec;
  spec.length = 64;
  spec.samples_per_class = 4;
  auto ds = make_synthetic_domain(spec, "d", 0, false);
  for (std::size_t i = 1; i < ds.size(); ++i) EXPECT_FALSE(ds.samples[i].values == ds.samples[i - 1].values);
}

TEST(Synthetic, SamplingRateShiftRegeneratesThroughPublicResampler) {
  SyntheticShiftSpec spec;
  spec.length = 100;
  spec.samples_per_class = 3;
  spec.shift_kinds = static_cast<unsigned>(ShiftKind::SamplingRate);
  spec.shift_magnitude = 0.25;
  spec.seed = 77;
  auto ds = make_synthetic_domain(spec, "t", 1, true);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto cls = static_cast<std::size_t>(*ds.samples[i].label);
    auto raw = synthesize_signal(spec, cls, 125, sample_seed(77, 1, i));
    EXPECT_EQ(resample_to_length(raw, 100), ds.samples[i].values) << "sample " << i;
  }
}

TEST(Synthetic, ZeroShiftDomainsAgreeInDistribution) {
  SyntheticShiftSpec spec;
  spec.length = 128;
  spec.samples_per_class = 150;
  spec.shift_magnitude = 0.0;
  auto a = make_synthetic_domain(spec, "a", 0, true);
  auto b = make_synthetic_domain(spec, "b", 1, true);
  // per-class mean energy and mean dominant-bin magnitude
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto stat = [&](const DomainDataset& d, std::vector<double>& e, std::vector<double>& f) {
      for (const auto& s : d.samples) {
        if (static_cast<std::size_t>(*s.label) != c) continue;
        double en = 0;
        for (double v : s.values.data) en += v * v;
        e.push_back(en / static_cast<double>(s.values.size()));
        auto sp = spectral_features(s.values);
        f.push_back(*std::max_element(sp.begin() + 1, sp.end()));
      }
    };
    std::vector<double> ea, fa, eb, fb;
    stat(a, ea, fa);
    stat(b, eb, fb);
    for (auto [x, y] : {std::pair{&ea, &eb}, std::pair{&fa, &fb}}) {
      auto [mx, sx] = [&] {
        double m = 0;
        for (double v : *x) m += v;
        m /= static_cast<double>(x->size());
        double ss = 0;
        for (double v : *x) ss += (v - m) * (v - m);
        return std::pair{m, std::sqrt(ss / static_cast<double>(x->size() - 1))};
      }();
      double my = 0, ssy = 0;
      for (double v : *y) my += v;
      my /= static_cast<double>(y->size());
      for (double v : *y) ssy += (v - my) * (v - my);
      const double sy = std::sqrt(ssy / static_cast<double>(y->size() - 1));
      const double se = std::sqrt(sx * sx / static_cast<double>(x->size()) + sy * sy / static_cast<double>(y->size()));
      EXPECT_LE(std::fabs(mx - my), 3.0 * se) << "class " << c;
    }
  }
}

TEST(Synthetic, FrequencyShiftMovesTheSpectrum) {
  SyntheticShiftSpec spec;
  spec.length = 256;
  spec.samples_per_class = 20;
  spec.noise_level = 0.05;
  spec.frequency_jitter = 0.0;
  spec.base_frequencies = {8.0, 16.0, 24.0};
  spec.shift_magnitude = 0.5;
  auto t = make_synthetic_domain(spec, "t", 1, true);
  for (const auto& s : t.samples) {
    auto sp = spectral_features(s.values);
    const auto peak = static_cast<std::size_t>(std::max_element(sp.begin() + 1, sp.end()) - sp.begin());
    EXPECT_EQ(static_cast<double>(peak), spec.base_frequency(static_cast<std::size_t>(*s.label)) * 1.5);
  }
}

TEST(Synthetic, ProbeSelfCheckRejectsInseparableClasses) {
  SyntheticShiftSpec spec;
  spec.length = 64;
  spec.samples_per_class = 30;
  spec.base_frequencies = {5.0, 5.0, 5.0};
  EXPECT_THROW(make_synthetic_shift_pair(spec), DataError);
  spec.base_frequencies = {3.0, 9.0, 15.0};
  spec.noise_level = 0.1;
  auto p = make_synthetic_shift_pair(spec);
  EXPECT_GE(p.probe_accuracy, 95.0);
  EXPECT_TRUE(p.source.labeled);
  EXPECT_FALSE(p.target.labeled);
}

TEST(Synthetic, UnlabeledTargetRefusesTrainingLabels) {
  auto p = oracle::micro_pair();
  const std::vector<std::size_t> idx{0, 1};
  EXPECT_THROW(batch_labels(p.target, idx), ProtocolError);
  EXPECT_NO_THROW(batch_labels(p.target, idx, true));
}

TEST(Loader, RoundTripThroughRawLayout) {
  const auto dir = scratch("roundtrip");
  SyntheticShiftSpec spec;
  spec.length = 48;
  spec.channels = 2;
  spec.samples_per_class = 3;
  auto ds = make_synthetic_domain(spec, "roundtrip", 0, false);
  write_domain_directory(dir, ds, 50.0);
  auto back = load_domain_directory(dir);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_TRUE(back.labeled);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    ASSERT_EQ(back.samples[i].values.shape, ds.samples[i].values.shape);
    for (std::size_t j = 0; j < ds.samples[i].values.size(); ++j)
      EXPECT_EQ(back.samples[i].values[j], static_cast<double>(static_cast<float>(ds.samples[i].values[j])));
  }
}

TEST(Loader, CsvRecordsWithLabelTrackAndWindowing) {
  const auto dir = scratch("csv");
  std::ofstream(dir / "manifest.txt") << "name = har_like\nchannels = 2\nlength = 4\nclasses = 2\nwindow = 4\nstride = 2\n";
  {
    std::ofstream rec(dir / "r1.csv");
    rec << "0,1,2,3,4,5,6,7\n";
    rec << "0,nan,2,3,4,5,6,7\n";
    std::ofstream lab(dir / "r1.labels");
    lab << "0 0 0 0 1 1 1 1\n";
  }
  auto ds = load_domain_directory(dir);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(*ds.samples[0].label, 0);
  EXPECT_EQ(*ds.samples[2].label, 1);
  EXPECT_DOUBLE_EQ(ds.samples[0].values.at(1, 1), 1.0);  // interpolated
  EXPECT_TRUE(ds.labeled);
}

TEST(Loader, RecordsAreResampledToManifestLength) {
  const auto dir = scratch("resample");
  std::ofstream(dir / "manifest.txt") << "channels = 1\nlength = 5\nclasses = 2\nlabel.a = 1\n";
  std::ofstream(dir / "a.csv") << "0 1 2 3 4 5 6 7 8\n";
  std::ofstream(dir / "b.csv") << "1 1 1\n";
  auto ds = load_domain_directory(dir);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.samples[0].length(), 5u);
  EXPECT_DOUBLE_EQ(ds.samples[0].values[2], 4.0);
  EXPECT_EQ(*ds.samples[0].label, 1);
  EXPECT_FALSE(ds.samples[1].label.has_value());
  EXPECT_FALSE(ds.labeled);
}

TEST(Loader, IgnoresNonRecordFilesAndNamesBadTokens) {
  const auto dir = scratch("extras");
  std::ofstream(dir / "manifest.txt") << "channels = 1\nlength = 3\nclasses = 2\nlabel.a = 0\n";
  std::ofstream(dir / "a.csv") << "1 2 3\n";
  std::ofstream(dir / "spec.txt") << "length = 3\n";
  std::ofstream(dir / "notes.tsv") << "x\ty\n";
  EXPECT_EQ(load_domain_directory(dir).size(), 1u);
  std::ofstream(dir / "b.csv") << "1 oops 3\n";
  try {
    load_domain_directory(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("b.csv"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("oops"), std::string::npos);
  }
}

TEST(Loader, MissingManifestIsAnError) {
  const auto dir = scratch("empty");
  EXPECT_THROW(load_domain_directory(dir), DataError);
}

TEST(Dataset, ValidateCatchesInconsistentSamples) {
  DomainDataset ds;
  ds.name = "bad";
  ds.num_classes = 2;
  ds.samples.push_back({Tensor({1, 4}), 0});
  ds.samples.push_back({Tensor({1, 5}), 1});
  EXPECT_THROW(ds.validate(), DataError);
  ds.samples[1] = {Tensor({1, 4}), 2};
  EXPECT_THROW(ds.validate(), DataError);
  ds.samples[1].label = 1;
  EXPECT_NO_THROW(ds.validate());
}
