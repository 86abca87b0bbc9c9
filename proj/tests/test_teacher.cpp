#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"

using namespace slarda;

namespace {

std::mt19937_64 rng(41);

Tensor random_probabilities(std::size_t B, std::size_t C, double temperature) {
  auto l = oracle::random_tensor({B, C}, rng, temperature);
  return ops::softmax_rows(l);
}

}  // namespace

TEST(Ema, ClosedFormOnTensors) {
  for (double alpha : {0.0, 0.5, 0.996, 1.0}) {
    auto psi0 = oracle::random_tensor({7, 3}, rng);
    auto W = oracle::random_tensor({7, 3}, rng);
    std::vector<Tensor> teacher{psi0};
    const std::vector<Tensor> student{W};
    for (int i = 0; i < 10; ++i) ema_update(teacher, student, alpha);
    const double an = std::pow(alpha, 10);
    for (std::size_t j = 0; j < W.size(); ++j)
      EXPECT_NEAR(teacher[0][j], an * psi0[j] + (1 - an) * W[j], 1e-10) << "alpha " << alpha;
  }
}

TEST(Ema, ClosedFormOnBundlesIncludingBuffers) {
  for (double alpha : {0.0, 0.5, 0.996, 1.0}) {
    Rng r(2);
    ModelBundle student(oracle::micro_architecture(), r);
    TeacherState t(student, alpha);
    const auto psi0 = t.model.state();
    // move the student away, buffers included
    for (auto& p : student.params())
      for (auto& v : (*p.var)->value.data) v += 0.3;
    for (auto& b : student.buffers())
      for (auto& v : b.tensor->data) v += 0.7;
    const auto W = student.state();
    for (int i = 0; i < 10; ++i) ema_update(t, student);
    EXPECT_EQ(t.updates, 10);
    const auto got = t.model.state();
    const double an = std::pow(alpha, 10);
    for (std::size_t k = 0; k < got.size(); ++k)
      for (std::size_t j = 0; j < got[k].size(); ++j)
        ASSERT_NEAR(got[k][j], an * psi0[k][j] + (1 - an) * W[k][j], 1e-10);
  }
}

TEST(Ema, TeacherIsFrozenAndTagged) {
  Rng r(3);
  ModelBundle s(oracle::micro_architecture(), r);
  TeacherState t(s, 0.9);
  EXPECT_EQ(t.model.role, Role::Teacher);
  for (auto& p : t.model.params()) EXPECT_FALSE((*p.var)->requires_grad);
  EXPECT_THROW(TeacherState(s, 1.5), ConfigError);
  std::vector<Tensor> a{Tensor({2})};
  const std::vector<Tensor> b{Tensor({3})};
  EXPECT_THROW(ema_update(a, b, 0.5), ShapeError);
}

TEST(PseudoLabels, ThresholdIsStrict) {
  Tensor p({3, 2}, std::vector<double>{0.9, 0.1, 0.95, 0.05, 0.3, 0.7});
  auto pl = select_confident(p, 0.9);
  EXPECT_EQ(pl.retained, (std::vector<std::size_t>{1}));
  EXPECT_EQ(pl.labels, (std::vector<int>{0}));
  EXPECT_NEAR(pl.mean_confidence, (0.9 + 0.95 + 0.7) / 3, 1e-15);
  EXPECT_NEAR(pl.retained_fraction(), 1.0 / 3, 1e-15);
  auto all = select_confident(p, 0.5);
  EXPECT_EQ(all.retained.size(), 3u);
  EXPECT_EQ(all.labels, (std::vector<int>{0, 0, 1}));
}

TEST(PseudoLabels, RetentionIsMonotoneInZeta) {
  const std::vector<double> zetas{0.1, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
  for (int batch = 0; batch < 100; ++batch) {
    auto p = random_probabilities(32, 3, 0.5 + 0.05 * batch);
    std::vector<std::size_t> prev;
    for (std::size_t z = 0; z < zetas.size(); ++z) {
      auto pl = select_confident(p, zetas[z]);
      if (z > 0) {
        EXPECT_LE(pl.retained.size(), prev.size());
        EXPECT_TRUE(std::includes(prev.begin(), prev.end(), pl.retained.begin(), pl.retained.end()));
      }
      prev = pl.retained;
    }
  }
}

TEST(PseudoLabels, ConditionalGradientVanishesOnDroppedRows) {
  auto logits = parameter(oracle::random_tensor({5, 3}, rng, 2.0));
  auto pl = select_confident(ops::softmax_rows(logits->value), 0.6);
  ASSERT_FALSE(pl.retained.empty());
  ASSERT_LT(pl.retained.size(), 5u);
  backward(class_conditional_loss(logits, pl));
  for (std::size_t i = 0; i < 5; ++i) {
    const bool kept = std::find(pl.retained.begin(), pl.retained.end(), i) != pl.retained.end();
    double norm = 0;
    for (std::size_t c = 0; c < 3; ++c) norm += std::fabs(logits->grad.at(i, c));
    if (kept) {
      EXPECT_GT(norm, 0.0) << i;
    } else {
      EXPECT_EQ(norm, 0.0) << i;
    }
  }
}

TEST(PseudoLabels, ConditionalLossHandArithmetic) {
  std::vector<std::vector<double>> l{{2.0, 0.0, -1.0}, {0.1, 0.2, 0.3}, {-3.0, 4.0, 0.0}};
  Tensor t({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = l[i][c];
  PseudoLabelBatch pl;
  pl.retained = {0, 2};
  pl.labels = {0, 1};
  pl.batch_size = 3;
  const double r0 = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0)) - 2.0;
  const double r2 = std::log(std::exp(-3.0) + std::exp(4.0) + 1.0) - 4.0;
  EXPECT_NEAR(class_conditional_loss(constant(t), pl)->value.item(), (r0 + r2) / 2, 1e-9);
  EXPECT_NEAR(class_conditional_loss(constant(t), pl)->value.item(), oracle::cross_entropy_oracle(l, {0, 2}, {0, 1}), 1e-12);
  PseudoLabelBatch none;
  none.batch_size = 3;
  EXPECT_EQ(class_conditional_loss(constant(t), none)->value.item(), 0.0);
}

TEST(PseudoLabels, CombinedTargetLoss) {
  auto adv = constant(Tensor::scalar(0.7)), ca = constant(Tensor::scalar(2.0));
  EXPECT_NEAR(combined_target_loss(adv, ca, 0.005)->value.item(), 0.71, 1e-12);
  EXPECT_EQ(combined_target_loss(adv, ca, 0.0)->value.item(), 0.7);
  EXPECT_THROW(combined_target_loss(adv, ca, -1.0), ConfigError);
}

TEST(PseudoLabels, TeacherPredictionsUseEvalMode) {
  Rng r(4);
  ModelBundle s(oracle::micro_architecture(), r);
  TeacherState t(s, 0.5);
  auto x = oracle::random_tensor({3, 2, 24}, rng);
  const auto before = t.model.state();
  auto pl = confident_pseudo_labels(t, x, 0.0);
  EXPECT_EQ(pl.retained.size(), 3u);
  EXPECT_EQ(t.model.state(), before);  // running statistics untouched
}
