#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace slarda;

namespace {

std::mt19937_64 rng(11);

Var C(const Tensor& t) { return constant(t); }

}  // namespace

TEST(Conv1d, MatchesDirectLoop) {
  for (std::size_t stride : {1u, 2u, 3u})
    for (std::size_t pad : {0u, 1u, 3u}) {
      auto x = oracle::random_tensor({2, 3, 17}, rng);
      auto w = oracle::random_tensor({4, 3, 5}, rng);
      auto b = oracle::random_tensor({4}, rng);
      auto y = ops::conv1d(C(x), C(w), C(b), stride, pad)->value;
      auto ref = oracle::conv1d_oracle(x, w, b, stride, pad);
      ASSERT_EQ(y.shape, ref.shape);
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Conv1d, OutputLength) {
  EXPECT_EQ(ops::conv_output_length(128, 8, 2, 4), 65u);
  EXPECT_EQ(ops::conv_output_length(3, 8, 1, 0), 0u);
}

TEST(BatchNorm, TrainingNormalizesEachChannel) {
  auto x = oracle::random_tensor({4, 3, 10}, rng, 3.0);
  for (auto& v : x.data) v += 5.0;
  Tensor rm({3}), rv({3}, 1.0);
  auto y = ops::batch_norm(C(x), C(Tensor({3}, 1.0)), C(Tensor({3})), rm, rv, true)->value;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0, xs = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 10; ++t) {
        s += y.at(b, c, t);
        s2 += y.at(b, c, t) * y.at(b, c, t);
        xs += x.at(b, c, t);
      }
    EXPECT_NEAR(s / 40, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 40, 1.0, 1e-4);  // eps keeps it slightly under 1
    EXPECT_NEAR(rm[c], 0.1 * xs / 40, 1e-12);
  }
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  auto x = oracle::random_tensor({2, 2, 5}, rng);
  Tensor rm({2}, std::vector<double>{0.5, -1.0}), rv({2}, std::vector<double>{4.0, 0.25});
  Tensor g({2}, std::vector<double>{2.0, 1.0}), be({2}, std::vector<double>{0.0, 3.0});
  auto y = ops::batch_norm(C(x), C(g), C(be), rm, rv, false)->value;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 5; ++t)
        EXPECT_NEAR(y.at(b, c, t), g[c] * (x.at(b, c, t) - rm[c]) / std::sqrt(rv[c] + 1e-5) + be[c], 1e-12);
  EXPECT_EQ(rm[0], 0.5);  // untouched in eval mode
}

TEST(LayerNorm, RowsNormalized) {
  auto x = oracle::random_tensor({3, 4, 6}, rng, 2.0);
  Tensor g({6}, 1.5), be({6}, 0.25);
  auto y = ops::layer_norm(C(x), C(g), C(be))->value;
  for (std::size_t r = 0; r < 12; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 6; ++j) m += x[r * 6 + j];
    m /= 6;
    for (std::size_t j = 0; j < 6; ++j) v += (x[r * 6 + j] - m) * (x[r * 6 + j] - m);
    v /= 6;
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_NEAR(y[r * 6 + j], 1.5 * (x[r * 6 + j] - m) / std::sqrt(v + 1e-5) + 0.25, 1e-12);
  }
}

TEST(Softmax, RowsSumToOneAndStable) {
  Tensor l({3, 4}, std::vector<double>{1, 2, 3, 4, -1000, 0, 1000, 1, 0, 0, 0, 0});
  auto p = ops::softmax_rows(l);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_GE(p.at(i, c), 0.0);
      s += p.at(i, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  EXPECT_NEAR(p.at(1, 2), 1.0, 1e-15);
  EXPECT_NEAR(p.at(2, 3), 0.25, 1e-15);
}

TEST(Attention, MatchesHandComputation) {
  auto q = oracle::random_tensor({2, 5, 4}, rng), k = oracle::random_tensor({2, 5, 4}, rng),
       v = oracle::random_tensor({2, 5, 4}, rng);
  for (std::size_t heads : {1u, 2u, 4u}) {
    Tensor w;
    auto y = ops::attention(C(q), C(k), C(v), heads, &w)->value;
    auto ref = oracle::attention_oracle(q, k, v, heads);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    ASSERT_EQ(w.shape, (Shape{2, heads, 5, 5}));
    for (std::size_t r = 0; r < w.size() / 5; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += w[r * 5 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, RejectsIndivisibleHeads) {
  auto q = oracle::random_tensor({1, 3, 5}, rng);
  EXPECT_THROW(ops::attention(C(q), C(q), C(q), 2, nullptr), ShapeError);
}

TEST(CrossEntropy, HandArithmetic) {
  // rows: [1,2,3] label 2, [0,0,0] label 0, [2,-1,0.5] label 1
  Tensor l({3, 3}, std::vector<double>{1, 2, 3, 0, 0, 0, 2, -1, 0.5});
  const std::vector<int> labels{2, 0, 1};
  const double r0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double r1 = std::log(3.0);
  const double r2 = std::log(std::exp(2.0) + std::exp(-1.0) + std::exp(0.5)) + 1.0;
  EXPECT_NEAR(ops::cross_entropy(C(l), labels)->value.item(), (r0 + r1 + r2) / 3.0, 1e-9);
  const std::vector<std::size_t> rows{0, 2};
  const std::vector<int> rl{2, 1};
  EXPECT_NEAR(ops::cross_entropy_rows(C(l), rows, rl)->value.item(), (r0 + r2) / 2.0, 1e-9);
  EXPECT_EQ(ops::cross_entropy_rows(C(l), {}, {})->value.item(), 0.0);
}

TEST(CrossEntropy, RejectsBadLabels) {
  Tensor l({2, 3});
  const std::vector<int> bad{0, 3};
  EXPECT_THROW(ops::cross_entropy(C(l), bad), Error);
}

TEST(Reductions, MeanAxesAndSlices) {
  auto x = oracle::random_tensor({2, 3, 4}, rng);
  auto m2 = ops::mean_axis2(C(x))->value;
  auto m1 = ops::mean_axis1(C(x))->value;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t t = 0; t < 4; ++t) s += x.at(b, c, t);
      EXPECT_NEAR(m2.at(b, c), s / 4, 1e-14);
    }
    for (std::size_t t = 0; t < 4; ++t) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += x.at(b, c, t);
      EXPECT_NEAR(m1.at(b, t), s / 3, 1e-14);
    }
  }
  auto sl = ops::slice_time(C(x), 1, 3)->value;
  EXPECT_EQ(sl.shape, (Shape{2, 3, 2}));
  EXPECT_EQ(sl.at(1, 2, 0), x.at(1, 2, 1));
  auto st = ops::select_time(C(x), 3)->value;
  EXPECT_EQ(st.at(1, 1), x.at(1, 1, 3));
  auto cl = ops::channels_last(C(x))->value;
  EXPECT_EQ(cl.at(1, 3, 2), x.at(1, 2, 3));
}
