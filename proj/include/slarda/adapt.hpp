#pragma once

// Adversarial adaptation of the target encoder against a domain
// discriminator over temporal features, with the pretrained source model
// frozen and an EMA teacher supplying confident pseudo labels.

#include <chrono>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include "slarda/teacher.hpp"

namespace slarda {

enum class DiscriminatorKind { Attention, Pooled };

struct AdaptConfig {
  std::size_t iterations = 300;
  std::size_t batch_size = 128;  ///< m, per domain
  nn::AdamConfig disc_adam{.learning_rate = 1e-3, .beta1 = 0.5, .beta2 = 0.99, .eps = 1e-8, .weight_decay = 3e-4};
  nn::AdamConfig enc_adam{.learning_rate = 1e-3, .beta1 = 0.5, .beta2 = 0.99, .eps = 1e-8, .weight_decay = 3e-4};
  double lambda = 0.005;  ///< class-conditional weight
  double alpha = 0.996;   ///< teacher momentum
  double zeta = 0.9;      ///< confidence threshold
  bool train_classifier = false;
  DiscriminatorKind discriminator = DiscriminatorKind::Attention;
  std::size_t eval_every = 0;  ///< 0: never evaluate target validation accuracy
  bool audit = false;          ///< bitwise parameter audits around every update
  std::uint64_t seed = 1;

  void validate() const {
    if (lambda < 0.0) throw ConfigError("adapt: lambda must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("adapt: alpha must lie in [0, 1]");
    if (zeta < 0.0 || zeta >= 1.0) throw ConfigError("adapt: zeta must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("adapt: batch size must be positive");
  }
};

constexpr double kProbabilityFloor = 1e-7;

namespace detail {
inline Var clamped_log(const Var& p) {
  const auto& v = p->value.data;
  if (std::any_of(v.begin(), v.end(), [](double x) { return x < kProbabilityFloor || x > 1.0 - kProbabilityFloor; }))
    std::clog << "[slarda] discriminator output clamped to [" << kProbabilityFloor << ", " << 1.0 - kProbabilityFloor
              << "]\n";
  return ops::log(ops::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor));
}
}  // namespace detail

/// -mean log D(H_S) - mean log(1 - D(H_T)); inputs are probabilities.
inline Var discriminator_loss(const Var& d_source, const Var& d_target) {
  if (d_source->value.size() == 0 || d_target->value.size() == 0)
    throw ShapeError("discriminator_loss: empty batch");
  auto ls = ops::mean(detail::clamped_log(d_source));
  auto lt = ops::mean(detail::clamped_log(ops::one_minus(d_target)));
  return ops::weighted_sum({ls, lt}, {-1.0, -1.0});
}

/// Inverted-label objective for the target encoder: -mean log D(H_T).
inline Var adversarial_loss(const Var& d_target) {
  if (d_target->value.size() == 0) throw ShapeError("adversarial_loss: empty batch");
  return ops::scale(ops::mean(detail::clamped_log(d_target)), -1.0);
}

inline std::unique_ptr<DomainDiscriminator> make_discriminator(const ArchitectureConfig& arch, DiscriminatorKind kind,
                                                               Rng& rng) {
  if (kind == DiscriminatorKind::Pooled)
    return std::make_unique<PooledDiscriminator>(arch.encoder.feature_channels(), arch.fc_disc_hidden, rng);
  auto cfg = arch.discriminator;
  cfg.input_channels = arch.encoder.feature_channels();
  return std::make_unique<AttentionDiscriminator>(cfg, rng);
}

struct AdaptIteration {
  std::size_t iter = 0;
  double disc_loss = 0.0;
  double adv_loss = 0.0;
  double ca_loss = 0.0;
  double retained_fraction = 0.0;
  double mean_confidence = 0.0;
  double target_val_acc = -1.0;  ///< monitoring only; -1 when not evaluated
};

struct AdaptResult {
  ModelBundle model;  ///< adapted target bundle (final iteration)
  TeacherState teacher;
  std::unique_ptr<DomainDiscriminator> discriminator;
  std::vector<AdaptIteration> curve;
  double seconds = 0.0;
};

using AdaptLogger = std::function<void(const AdaptIteration&)>;

/// Cycles through a shuffled index list, reshuffling at each pass.
class IndexSampler {
 public:
  IndexSampler(std::vector<std::size_t> indices, std::uint64_t seed) : idx_(std::move(indices)), rng_(seed) {
    if (idx_.empty()) throw DataError("sampler: empty index set");
    std::shuffle(idx_.begin(), idx_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t m) {
    std::vector<std::size_t> out;
    out.reserve(m);
    while (out.size() < m) {
      if (pos_ == idx_.size()) {
        std::shuffle(idx_.begin(), idx_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(idx_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> idx_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

/// Runs the adaptation loop. `source_model` is copied and frozen; it is never
/// modified. The target domain must be flagged unlabeled.
inline AdaptResult adapt_target(const ModelBundle& source_model, const DomainDataset& source,
                                const DomainDataset& target, const AdaptConfig& cfg, const AdaptLogger& log = {},
                                const DomainDataset* monitor = nullptr) {
  cfg.validate();
  if (target.labeled)
    throw ProtocolError("adapt_target: target domain '" + target.name +
                        "' is flagged labeled; its training split must be unlabeled");
  if (!source.labeled) throw ProtocolError("adapt_target: source domain must be labeled");
  const auto start = std::chrono::steady_clock::now();

  ModelBundle src = source_model;
  src.role = Role::Source;
  src.freeze_all();

  AdaptResult res;
  res.model = source_model;  // E_T initialized from E_S
  ModelBundle& tgt = res.model;
  tgt.role = Role::Target;
  tgt.step = 0;
  tgt.freeze_all();
  tgt.set_trainable(ModelBundle::Part::Encoder, true);
  if (cfg.train_classifier) tgt.set_trainable(ModelBundle::Part::Classifier, true);

  res.teacher = TeacherState(tgt, cfg.alpha);

  Rng init_rng(cfg.seed);
  res.discriminator = make_discriminator(tgt.architecture(), cfg.discriminator, init_rng);
  auto& disc = *res.discriminator;

  auto enc_params = tgt.params(ModelBundle::Part::Encoder);
  if (cfg.train_classifier) {
    auto cp = tgt.params(ModelBundle::Part::Classifier);
    enc_params.insert(enc_params.end(), cp.begin(), cp.end());
  }
  nn::Adam disc_opt(disc.params(), cfg.disc_adam);
  nn::Adam enc_opt(enc_params, cfg.enc_adam);

  IndexSampler src_sampler(source.splits.train, cfg.seed * 2 + 1);
  IndexSampler tgt_sampler(target.splits.train, cfg.seed * 2 + 2);

  const auto src_snapshot = cfg.audit ? src.state() : std::vector<Tensor>{};

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto si = src_sampler.next(cfg.batch_size);
    const auto ti = tgt_sampler.next(cfg.batch_size);
    const Tensor xs = make_batch(source, si);
    const Tensor xt = make_batch(target, ti);

    auto hs = src.encoder(constant(xs), false);
    auto ht = tgt.encoder(constant(xt), true);

    // Discriminator step: source labeled 1, target 0.
    auto disc_refs = disc.params();
    const auto enc_before = cfg.audit ? nn::snapshot(enc_params) : std::vector<Tensor>{};
    disc_opt.zero_grad();
    auto l_d = discriminator_loss(disc(detach(hs)), disc(detach(ht)));
    backward(l_d);
    disc_opt.step();
    if (cfg.audit && !nn::bitwise_equal(enc_params, enc_before))
      throw ProtocolError("audit: discriminator step modified encoder parameters");

    // Encoder step: inverted labels plus class-conditional alignment.
    const auto disc_before = cfg.audit ? nn::snapshot(disc_refs) : std::vector<Tensor>{};
    const auto teacher_before = cfg.audit ? res.teacher.model.state() : std::vector<Tensor>{};
    enc_opt.zero_grad();
    auto l_adv = adversarial_loss(disc(ht));
    auto pl = confident_pseudo_labels(res.teacher, xt, cfg.zeta);
    auto l_ca = class_conditional_loss(tgt.classifier(ht), pl);
    auto total = combined_target_loss(l_adv, l_ca, cfg.lambda);
    if (!std::isfinite(total->value.item())) {
      std::ostringstream os;
      os << "adaptation diverged at iteration " << it << ": L_D " << l_d->value.item() << ", L_adv "
         << l_adv->value.item() << ", L_ca " << l_ca->value.item();
      throw DivergenceError(os.str());
    }
    backward(total);
    enc_opt.step();
    disc_opt.zero_grad();
    if (cfg.audit && !nn::bitwise_equal(disc_refs, disc_before))
      throw ProtocolError("audit: encoder step modified discriminator parameters");
    if (cfg.audit && !(res.teacher.model.state() == teacher_before))
      throw ProtocolError("audit: an optimizer step modified teacher parameters");
    ++tgt.step;

    ema_update(res.teacher, tgt);

    AdaptIteration rec;
    rec.iter = it;
    rec.disc_loss = l_d->value.item();
    rec.adv_loss = l_adv->value.item();
    rec.ca_loss = l_ca->value.item();
    rec.retained_fraction = pl.retained_fraction();
    rec.mean_confidence = pl.mean_confidence;
    if (monitor && cfg.eval_every && ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations))
      rec.target_val_acc = evaluate(tgt, *monitor, monitor->splits.val).accuracy;
    res.curve.push_back(rec);
    if (log) log(rec);
  }

  if (cfg.audit && !(src.state() == src_snapshot))
    throw ProtocolError("audit: frozen source model changed during adaptation");
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace slarda
