#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"

using namespace slarda;
namespace fs = std::filesystem;

namespace {

fs::path write_ini(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / ("slarda_test_config_" + name + ".ini");
  std::ofstream(p) << text;
  return p;
}

fs::path repo_config(const std::string& name) { return fs::path(SLARDA_SOURCE_DIR) / "configs" / name; }

}  // namespace

TEST(Config, FamilyDefaults) {
  auto har = default_config("har");
  EXPECT_EQ(har.pretrain.batch_size, 128u);
  EXPECT_EQ(har.adapt.enc_adam.learning_rate, 1e-4);
  EXPECT_EQ(har.source, "A");
  EXPECT_EQ(har.target, "B");
  auto ssc = default_config("ssc");
  EXPECT_EQ(ssc.adapt.disc_adam.learning_rate, 1e-3);
  auto mfd = default_config("mfd");
  EXPECT_EQ(mfd.adapt.batch_size, 512u);
  for (const auto& c : {har, ssc, mfd, default_config("synthetic")}) {
    EXPECT_EQ(c.adapt.lambda, 0.005);
    EXPECT_EQ(c.adapt.alpha, 0.996);
    EXPECT_EQ(c.adapt.zeta, 0.9);
    EXPECT_EQ(c.pretrain.adam.weight_decay, 3e-4);
  }
  EXPECT_THROW(default_config("cifar"), ConfigError);
}

TEST(Config, FamilyIsAppliedBeforeOtherKeys) {
  // family last in the file still sets the defaults the earlier keys refine
  auto p = write_ini("order", "[adapt]\nlambda = 0.1\n[dataset]\ndomains = A, B\nfamily = har\n");
  auto c = load_config(p);
  EXPECT_EQ(c.family, "har");
  EXPECT_EQ(c.adapt.lambda, 0.1);
  EXPECT_EQ(c.domains, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(c.pretrain.batch_size, 128u);
}

TEST(Config, OverridesParseEveryKind) {
  auto c = default_config("synthetic");
  apply_override(c, "adapt.zeta=0.8");
  apply_override(c, "adapt.train_classifier = yes");
  apply_override(c, "adapt.discriminator=pooled");
  apply_override(c, "runner.seeds=7, 8");
  apply_override(c, "model.encoder_widths=8,16,32");
  apply_override(c, "adapt.learning_rate=0.002");
  EXPECT_EQ(c.adapt.zeta, 0.8);
  EXPECT_TRUE(c.adapt.train_classifier);
  EXPECT_EQ(c.adapt.discriminator, DiscriminatorKind::Pooled);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(c.arch.encoder.widths, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(c.adapt.disc_adam.learning_rate, 0.002);
  EXPECT_EQ(c.adapt.enc_adam.learning_rate, 0.002);
  EXPECT_THROW(apply_override(c, "zeta=0.8"), ConfigError);
  EXPECT_THROW(apply_override(c, "adapt.zeta"), ConfigError);
  EXPECT_THROW(apply_override(c, "adapt.zeta=high"), ConfigError);
  EXPECT_THROW(apply_override(c, "adapt.train_classifier=maybe"), ConfigError);
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
  auto c = default_config("synthetic");
  EXPECT_THROW(apply_override(c, "adapt.gamma=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "optimizer.lr=1"), ConfigError);
  EXPECT_THROW(load_config(write_ini("section", "[trainer]\nepochs = 3\n")), ConfigError);
  EXPECT_THROW(load_config(write_ini("key", "[pretrain]\nepoch = 3\n")), ConfigError);
  EXPECT_THROW(load_config(fs::temp_directory_path() / "slarda_no_such_config.ini"), ConfigError);
  try {
    apply_override(c, "adapt.gamma=1");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[adapt] gamma"), std::string::npos);
  }
}

TEST(Config, SyntheticDomainsUsePresetsOrNumbers) {
  auto c = default_config("synthetic");
  apply_override(c, "dataset.domains=a:0, b:low, c:0.25, d:high");
  ASSERT_EQ(c.synthetic_domains.size(), 4u);
  EXPECT_EQ(c.synthetic_domains[0].shift_magnitude, 0.0);
  EXPECT_EQ(c.synthetic_domains[1].shift_magnitude, shift_preset("low"));
  EXPECT_EQ(c.synthetic_domains[2].shift_magnitude, 0.25);
  EXPECT_EQ(c.synthetic_domains[3].shift_magnitude, shift_preset("high"));
  EXPECT_LT(shift_preset("low"), shift_preset("medium"));
  EXPECT_LT(shift_preset("medium"), shift_preset("high"));
  EXPECT_THROW(apply_override(c, "dataset.domains=a:huge"), ConfigError);
  EXPECT_EQ(family_domains(c), (std::vector<std::string>{"a", "b", "c", "d"}));
}

TEST(Config, CanonicalHashIsStableAndSensitive) {
  auto a = default_config("synthetic"), b = default_config("synthetic");
  EXPECT_EQ(canonical_text(a), canonical_text(b));
  EXPECT_EQ(hex64(fnv1a(canonical_text(a))).size(), 16u);
  apply_override(b, "adapt.lambda=0.005");  // same value, same text
  EXPECT_EQ(canonical_text(a), canonical_text(b));
  apply_override(b, "adapt.lambda=0.0050001");
  EXPECT_NE(fnv1a(canonical_text(a)), fnv1a(canonical_text(b)));
  // published FNV-1a 64 test vectors
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Config, CanonicalTextRoundTripsThroughIni) {
  auto c = default_config("synthetic");
  apply_override(c, "dataset.domains=src:0, tgt:0.2");
  apply_override(c, "adapt.zeta=0.7");
  apply_override(c, "model.gru_hidden=48");
  auto text = canonical_text(c);
  auto back = load_config(write_ini("roundtrip", text));
  EXPECT_EQ(canonical_text(back), text);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* f : {"synthetic.ini", "synthetic_matrix.ini", "har.ini", "ssc.ini", "mfd.ini"}) {
    ExperimentConfig c;
    ASSERT_NO_THROW(c = load_config(repo_config(f))) << f;
    EXPECT_NO_THROW(reconcile(c.arch)) << f;
  }
  auto m = load_config(repo_config("synthetic_matrix.ini"));
  EXPECT_EQ(family_domains(m).size(), 4u);
  EXPECT_EQ(m.seeds.size(), 3u);
  // the shipped synthetic config is the built-in default
  EXPECT_EQ(canonical_text(load_config(repo_config("synthetic.ini"))), canonical_text(default_config("synthetic")));
}
