#pragma once

// Source pretraining: supervised cross-entropy plus the contrastive
// future-prediction objective over encoder latents.

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "slarda/inference.hpp"

namespace slarda {

struct CPCConfig {
  std::size_t horizon = 4;  ///< number of future offsets; clipped to the model's horizon
  std::size_t min_t = 0;    ///< smallest admissible anchor step
};

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  nn::AdamConfig adam{.learning_rate = 1e-3, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 3e-4};
  double cpc_weight = 1.0;  ///< 0 reduces to plain supervised training
  std::uint64_t seed = 1;
};

/// exp(h . z)
inline double similarity_score(std::span<const double> h, std::span<const double> z) {
  if (h.size() != z.size()) throw ShapeError("similarity_score: dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!std::isfinite(h[i]) || !std::isfinite(z[i])) throw DataError("similarity_score: non-finite input");
    dot += h[i] * z[i];
  }
  return std::exp(dot);
}

/// Contrastive loss for one offset: row i of `predicted` [B x C_f] is scored
/// against every row of `future` [B x C_f]; row i of `future` is its positive.
inline Var cpc_offset_loss(const Var& predicted, const Var& future) {
  const auto& s = predicted->shape();
  if (s.size() != 2 || future->shape() != s) throw ShapeError("cpc_loss: predicted/future shape mismatch");
  if (s[0] < 2) throw ConfigError("cpc_loss: batch size must be at least 2 (negatives come from the batch)");
  auto scores = ops::matmul(predicted, ops::transpose2d(future));  // [B x B], log of similarity
  std::vector<int> diag(s[0]);
  std::iota(diag.begin(), diag.end(), 0);
  return ops::cross_entropy(scores, diag);
}

/// Mean over offsets 1..K_h of the contrastive loss, using predictions
/// z_{t+k} = FC_k(r_t) against the true latents h_{t+k}.
inline Var cpc_loss(const Var& context, const std::vector<Var>& future_latents, FuturePredictor& predictor) {
  if (future_latents.empty()) throw ConfigError("cpc_loss: no future offsets");
  if (context->value.rank() != 2 || context->value.dim(0) < 2)
    throw ConfigError("cpc_loss: batch size must be at least 2 (negatives come from the batch)");
  std::vector<Var> terms;
  for (std::size_t k = 1; k <= future_latents.size(); ++k)
    terms.push_back(cpc_offset_loss(predictor(k, context), future_latents[k - 1]));
  return ops::weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(terms.size())));
}

/// Mean categorical cross-entropy of logits [B x C] against labels.
inline Var supervised_loss(const Var& logits, std::span<const int> labels) { return ops::cross_entropy(logits, labels); }

struct PretrainEpoch {
  std::size_t epoch = 0;
  double sup_loss = 0.0;
  double cpc_loss = 0.0;
  double val_acc = 0.0;
};

struct PretrainResult {
  ModelBundle model;  ///< best-validation checkpoint
  std::vector<PretrainEpoch> curve;
  std::size_t best_epoch = 0;
  double best_val_acc = -1.0;
  double seconds = 0.0;
};

/// Losses of one pretraining batch. `t_rng` draws the anchor step.
struct PretrainLosses {
  Var supervised;
  Var contrastive;  ///< null when the contrastive weight is 0
  Var total;
};

inline PretrainLosses pretrain_batch_losses(ModelBundle& bundle, const Tensor& batch, std::span<const int> labels,
                                            const CPCConfig& cpc, double cpc_weight, std::mt19937_64& t_rng,
                                            bool training = true) {
  auto features = bundle.encoder(constant(batch), training);
  PretrainLosses out;
  out.supervised = supervised_loss(bundle.classifier(features), labels);
  const auto kp = features->shape()[2];
  const auto horizon = std::min(cpc.horizon, bundle.predictor.horizon());
  if (horizon == 0 || kp < horizon + 1 + cpc.min_t)
    throw ShapeError("pretrain: feature length " + std::to_string(kp) + " too short for horizon " +
                     std::to_string(horizon));
  // t is drawn even when the contrastive term is off so both settings see the same stream.
  std::uniform_int_distribution<std::size_t> pick(cpc.min_t, kp - horizon - 1);
  const auto t = pick(t_rng);
  if (cpc_weight != 0.0) {
    auto context = bundle.context(ops::slice_time(features, 0, t + 1));
    std::vector<Var> future;
    for (std::size_t k = 1; k <= horizon; ++k) future.push_back(ops::select_time(features, t + k));
    out.contrastive = cpc_loss(context, future, bundle.predictor);
    out.total = ops::weighted_sum({out.supervised, out.contrastive}, {1.0, cpc_weight});
  } else {
    out.total = out.supervised;
  }
  return out;
}

/// Epoch-wise minibatch order; the last partial batch is dropped when it would
/// hold fewer than 2 samples.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> indices, std::size_t batch_size,
                                                           std::mt19937_64& rng) {
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += batch_size) {
    const auto n = std::min(batch_size, indices.size() - i);
    if (n < 2) break;
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                     indices.begin() + static_cast<std::ptrdiff_t>(i + n));
  }
  return out;
}

using PretrainLogger = std::function<void(const PretrainEpoch&)>;

/// Joint supervised + contrastive training of every source sub-network. The
/// checkpoint with the best validation accuracy is returned; on ties the
/// later epoch wins.
inline PretrainResult pretrain_source(ModelBundle bundle, const DomainDataset& source, const CPCConfig& cpc,
                                      const PretrainConfig& cfg, const PretrainLogger& log = {}) {
  if (!source.labeled) throw ProtocolError("pretrain_source: source domain '" + source.name + "' is not labeled");
  if (cfg.batch_size < 2) throw ConfigError("pretrain: batch size must be at least 2");
  if (source.splits.train.size() < 2) throw DataError("pretrain: source training split too small");
  const auto start = std::chrono::steady_clock::now();

  bundle.role = Role::Source;
  for (auto p : ModelBundle::all_parts()) bundle.set_trainable(p, true);
  nn::Adam opt(bundle.params(), cfg.adam);
  std::mt19937_64 batch_rng(cfg.seed);
  std::mt19937_64 t_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  PretrainResult result;
  const auto& val_idx = source.splits.val.empty() ? source.splits.train : source.splits.val;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sup_sum = 0.0, cpc_sum = 0.0;
    std::size_t nb = 0;
    for (const auto& idx : epoch_batches(source.splits.train, cfg.batch_size, batch_rng)) {
      const auto batch = make_batch(source, idx);
      const auto labels = batch_labels(source, idx);
      opt.zero_grad();
      auto losses = pretrain_batch_losses(bundle, batch, labels, cpc, cfg.cpc_weight, t_rng);
      const double total = losses.total->value.item();
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "pretrain diverged at epoch " << epoch << " batch " << nb << ": sup_loss "
           << losses.supervised->value.item() << ", cpc_loss "
           << (losses.contrastive ? losses.contrastive->value.item() : 0.0) << ", learning rate "
           << cfg.adam.learning_rate;
        throw DivergenceError(os.str());
      }
      backward(losses.total);
      opt.step();
      ++bundle.step;
      sup_sum += losses.supervised->value.item();
      if (losses.contrastive) cpc_sum += losses.contrastive->value.item();
      ++nb;
    }
    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.sup_loss = nb ? sup_sum / static_cast<double>(nb) : 0.0;
    rec.cpc_loss = nb ? cpc_sum / static_cast<double>(nb) : 0.0;
    rec.val_acc = evaluate(bundle, source, val_idx).accuracy;
    result.curve.push_back(rec);
    if (log) log(rec);
    if (rec.val_acc >= result.best_val_acc) {  // ties go to the later epoch
      result.best_val_acc = rec.val_acc;
      result.best_epoch = epoch;
      result.model = bundle;
    }
  }
  if (cfg.epochs == 0) result.model = bundle;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace slarda
