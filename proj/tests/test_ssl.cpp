#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace slarda;

namespace {

std::mt19937_64 rng(31);

}  // namespace

TEST(Contrastive, UniformScoresGiveLogB) {
  for (std::size_t B : {2u, 3u, 8u, 32u}) {
    auto pred = constant(Tensor({B, 5}));
    auto fut = constant(oracle::random_tensor({B, 5}, rng));
    EXPECT_NEAR(cpc_offset_loss(pred, fut)->value.item(), std::log(static_cast<double>(B)), 1e-6);
  }
}

TEST(Contrastive, ZeroPredictorGivesLogBOverHorizon) {
  Rng r(2);
  FuturePredictor fp(3, 4, 5, r);
  for (std::size_t k = 1; k <= 3; ++k) {
    fp.map(k).weight->value.fill(0.0);
    fp.map(k).bias->value.fill(0.0);
  }
  auto ctx = constant(oracle::random_tensor({6, 4}, rng));
  std::vector<Var> fut;
  for (int k = 0; k < 3; ++k) fut.push_back(constant(oracle::random_tensor({6, 5}, rng)));
  EXPECT_NEAR(cpc_loss(ctx, fut, fp)->value.item(), std::log(6.0), 1e-6);
}

TEST(Contrastive, MatchesMaterializedScoreMatrix) {
  for (std::size_t B = 2; B <= 8; ++B)
    for (int rep = 0; rep < 5; ++rep) {
      auto pred = oracle::random_tensor({B, 4}, rng, 0.7);
      auto fut = oracle::random_tensor({B, 4}, rng, 0.7);
      EXPECT_NEAR(cpc_offset_loss(constant(pred), constant(fut))->value.item(), oracle::cpc_matrix_oracle(pred, fut),
                  1e-10)
          << "B=" << B;
    }
}

TEST(Contrastive, HorizonAveragesOffsets) {
  Rng r(3);
  FuturePredictor fp(2, 3, 4, r);
  auto ctx = constant(oracle::random_tensor({5, 3}, rng));
  auto f1 = oracle::random_tensor({5, 4}, rng), f2 = oracle::random_tensor({5, 4}, rng);
  const double want = 0.5 * (oracle::cpc_matrix_oracle(fp(1, ctx)->value, f1) + oracle::cpc_matrix_oracle(fp(2, ctx)->value, f2));
  EXPECT_NEAR(cpc_loss(ctx, {constant(f1), constant(f2)}, fp)->value.item(), want, 1e-10);
  EXPECT_THROW(fp(3, ctx), ConfigError);
}

TEST(Contrastive, RejectsSingletonBatch) {
  EXPECT_THROW(cpc_offset_loss(constant(Tensor({1, 3})), constant(Tensor({1, 3}))), ConfigError);
}

TEST(Contrastive, SimilarityScore) {
  const std::vector<double> h{1.0, -2.0, 0.5}, z{0.5, 0.25, 2.0};
  EXPECT_NEAR(similarity_score(h, z), std::exp(0.5 - 0.5 + 1.0), 1e-15);
  const std::vector<double> short_z{1.0};
  EXPECT_THROW(similarity_score(h, short_z), ShapeError);
  const std::vector<double> bad{NAN, 0.0, 0.0};
  EXPECT_THROW(similarity_score(bad, z), DataError);
}

TEST(Pretrain, BatchLossesCombineSupervisedAndContrastive) {
  Rng r(4);
  ModelBundle b(oracle::micro_architecture(), r);
  auto x = oracle::random_tensor({4, 2, 24}, rng);
  const std::vector<int> labels{0, 1, 2, 0};
  CPCConfig cpc{.horizon = 1, .min_t = 0};
  std::mt19937_64 t1(8), t2(8);
  auto l = pretrain_batch_losses(b, x, labels, cpc, 0.5, t1, false);
  EXPECT_NEAR(l.total->value.item(), l.supervised->value.item() + 0.5 * l.contrastive->value.item(), 1e-14);
  auto l0 = pretrain_batch_losses(b, x, labels, cpc, 0.0, t2, false);
  EXPECT_FALSE(l0.contrastive);
  EXPECT_EQ(l0.total->value.item(), l0.supervised->value.item());
  EXPECT_EQ(t1(), t2());  // same anchor stream either way
}

TEST(Pretrain, ZeroContrastiveWeightIsPlainSupervisedTraining) {
  auto pair = oracle::micro_pair(5);
  Rng r(6);
  ModelBundle init(oracle::micro_pair_architecture(), r);
  PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.cpc_weight = 0.0;
  cfg.seed = 12;
  auto res = pretrain_source(init, pair.source, {}, cfg);

  // independent loop: Adam on the supervised loss only
  ModelBundle m = init;
  nn::Adam opt(m.params(), cfg.adam);
  std::mt19937_64 batch_rng(cfg.seed);
  std::vector<std::vector<Tensor>> states;
  std::vector<double> sup;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double s = 0;
    std::size_t nb = 0;
    for (const auto& idx : epoch_batches(pair.source.splits.train, cfg.batch_size, batch_rng)) {
      opt.zero_grad();
      auto y = batch_labels(pair.source, idx);
      auto loss = ops::cross_entropy(m.classifier(m.encoder(constant(make_batch(pair.source, idx)), true)), y);
      backward(loss);
      opt.step();
      s += loss->value.item();
      ++nb;
    }
    sup.push_back(s / static_cast<double>(nb));
    states.push_back(m.state());
  }
  // Eigen's GEMM summation order depends on buffer alignment, so agreement
  // is to rounding rather than bitwise.
  ASSERT_EQ(res.curve.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_NEAR(res.curve[e].sup_loss, sup[e], 1e-12);
    EXPECT_EQ(res.curve[e].cpc_loss, 0.0);
  }
  const auto got = res.model.state();
  const auto& want = states[res.best_epoch];
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    ASSERT_EQ(got[i].shape, want[i].shape);
    for (std::size_t j = 0; j < got[i].size(); ++j) ASSERT_NEAR(got[i][j], want[i][j], 1e-10) << "tensor " << i;
  }
}

TEST(Pretrain, BestEpochIsTheLatestMaximum) {
  auto pair = oracle::micro_pair(7);
  Rng r(8);
  PretrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  auto res = pretrain_source(ModelBundle(oracle::micro_pair_architecture(), r), pair.source, {.horizon = 2, .min_t = 0}, cfg);
  double best = -1;
  std::size_t at = 0;
  for (const auto& e : res.curve)
    if (e.val_acc >= best) {
      best = e.val_acc;
      at = e.epoch;
    }
  EXPECT_EQ(res.best_epoch, at);
  EXPECT_EQ(res.best_val_acc, best);
  EXPECT_LT(res.curve.back().sup_loss, res.curve.front().sup_loss);
  EXPECT_GT(res.curve.front().cpc_loss, 0.0);
}

TEST(Pretrain, RefusesUnlabeledSource) {
  auto pair = oracle::micro_pair();
  Rng r(1);
  EXPECT_THROW(pretrain_source(ModelBundle(oracle::micro_pair_architecture(), r), pair.target, {}, {}), ProtocolError);
}

TEST(Pretrain, EpochBatchesDropSingletons) {
  std::vector<std::size_t> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 g(1);
  auto b = epoch_batches(idx, 4, g);
  ASSERT_EQ(b.size(), 2u);  // 4 + 4, the trailing singleton is dropped
  std::mt19937_64 g2(1);
  EXPECT_EQ(epoch_batches(idx, 4, g2), b);
}
