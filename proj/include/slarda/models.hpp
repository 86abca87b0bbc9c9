#pragma once

// Backbone networks: convolutional encoder, recurrent context summarizer,
// per-horizon future predictors, classifier head, and the two domain
// discriminators (self-attention over time, and the fully connected variant
// used by the no_ar ablation).

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slarda/nn.hpp"

namespace slarda {

using nn::BufferRef;
using nn::ParamRef;
using nn::Rng;

// ----------------------------------------------------------------------- configs

struct EncoderConfig {
  std::size_t input_channels = 1;
  std::size_t num_layers = 3;
  std::size_t base_channels = 16;  ///< first-layer width; doubles per layer unless `widths` is set
  std::size_t kernel_size = 8;
  std::size_t stride = 2;
  std::optional<std::size_t> padding;  ///< defaults to kernel_size / 2
  std::vector<std::size_t> widths;     ///< explicit per-layer widths

  std::size_t pad() const { return padding.value_or(kernel_size / 2); }

  std::vector<std::size_t> layer_widths() const {
    if (!widths.empty()) return widths;
    std::vector<std::size_t> w(num_layers);
    for (std::size_t i = 0; i < num_layers; ++i) w[i] = base_channels << i;
    return w;
  }

  std::size_t feature_channels() const { return layer_widths().back(); }

  /// Temporal length after the whole stack; 0 when the input is too short.
  std::size_t output_length(std::size_t input_len) const {
    std::size_t len = input_len;
    for (std::size_t i = 0; i < num_layers; ++i) {
      len = ops::conv_output_length(len, kernel_size, stride, pad());
      if (len == 0) return 0;
    }
    return len;
  }

  /// Smallest input length whose output length is at least 2.
  std::size_t min_input_length() const {
    std::size_t len = 2;
    for (std::size_t i = 0; i < num_layers; ++i) {
      // invert floor((L + 2p - k)/s) + 1 >= len
      const std::size_t need = (len - 1) * stride + kernel_size;
      len = need > 2 * pad() ? need - 2 * pad() : 1;
    }
    return len;
  }

  void validate() const {
    if (input_channels == 0 || num_layers == 0 || base_channels == 0 || kernel_size == 0 || stride == 0)
      throw ConfigError("encoder: all sizes must be positive");
    if (!widths.empty() && widths.size() != num_layers)
      throw ConfigError("encoder: widths list must have num_layers entries");
  }
};

struct ContextNetConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 1;
};

struct DiscriminatorConfig {
  std::size_t input_channels = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 1;
  std::size_t num_heads = 2;
  std::size_t feedforward_dim = 128;
  std::size_t max_length = 64;  ///< rows in the learned positional table

  void validate() const {
    if (num_heads == 0 || hidden_dim % num_heads != 0)
      throw ConfigError("discriminator: hidden_dim " + std::to_string(hidden_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (num_layers == 0 || feedforward_dim == 0 || max_length == 0 || input_channels == 0)
      throw ConfigError("discriminator: sizes must be positive");
  }
};

struct ArchitectureConfig {
  std::string name = "custom";
  std::size_t input_length = 128;
  std::size_t num_classes = 2;
  EncoderConfig encoder;
  ContextNetConfig context;
  DiscriminatorConfig discriminator;
  std::size_t fc_disc_hidden = 64;  ///< hidden width of the fully connected discriminator
  std::size_t horizon = 4;          ///< future steps predicted during pretraining
};

/// Architecture presets for the three benchmark families plus the desk-scale
/// synthetic setting. Widths double per encoder layer.
inline ArchitectureConfig har_architecture() {
  ArchitectureConfig a;
  a.name = "har";
  a.input_length = 128;
  a.num_classes = 4;
  a.encoder = {.input_channels = 113, .num_layers = 3, .base_channels = 16, .kernel_size = 8, .stride = 2, .padding = {}, .widths = {}};
  a.context = {.input_dim = 64, .hidden_dim = 16, .num_layers = 1};
  a.discriminator = {.input_channels = 64, .hidden_dim = 16, .num_layers = 8, .num_heads = 2,
                     .feedforward_dim = 64, .max_length = 64};
  return a;
}

inline ArchitectureConfig ssc_architecture() {
  ArchitectureConfig a;
  a.name = "ssc";
  a.input_length = 3000;
  a.num_classes = 5;
  a.encoder = {.input_channels = 1, .num_layers = 3, .base_channels = 32, .kernel_size = 25, .stride = 3, .padding = {}, .widths = {}};
  a.context = {.input_dim = 128, .hidden_dim = 64, .num_layers = 1};
  a.discriminator = {.input_channels = 128, .hidden_dim = 64, .num_layers = 8, .num_heads = 4,
                     .feedforward_dim = 512, .max_length = 128};
  return a;
}

inline ArchitectureConfig mfd_architecture() {
  ArchitectureConfig a;
  a.name = "mfd";
  a.input_length = 5120;
  a.num_classes = 3;
  a.encoder = {.input_channels = 1, .num_layers = 5, .base_channels = 8, .kernel_size = 32, .stride = 2, .padding = {}, .widths = {}};
  a.context = {.input_dim = 128, .hidden_dim = 64, .num_layers = 1};
  a.discriminator = {.input_channels = 128, .hidden_dim = 8, .num_layers = 4, .num_heads = 4,
                     .feedforward_dim = 128, .max_length = 256};
  return a;
}

inline ArchitectureConfig synthetic_architecture() {
  ArchitectureConfig a;
  a.name = "synthetic";
  a.input_length = 512;
  a.num_classes = 3;
  a.encoder = {.input_channels = 1, .num_layers = 3, .base_channels = 8, .kernel_size = 8, .stride = 4, .padding = {}, .widths = {}};
  a.context = {.input_dim = 32, .hidden_dim = 32, .num_layers = 1};
  a.discriminator = {.input_channels = 32, .hidden_dim = 32, .num_layers = 1, .num_heads = 2,
                     .feedforward_dim = 64, .max_length = 16};
  a.fc_disc_hidden = 64;
  a.horizon = 4;
  return a;
}

inline ArchitectureConfig architecture_for(const std::string& family) {
  if (family == "har") return har_architecture();
  if (family == "ssc") return ssc_architecture();
  if (family == "mfd") return mfd_architecture();
  if (family == "synthetic") return synthetic_architecture();
  throw ConfigError("unknown dataset family '" + family + "'");
}

/// Fills in the derived sizes (context input, discriminator input, positional
/// table) from the encoder so the pieces always agree.
inline void reconcile(ArchitectureConfig& a) {
  a.encoder.validate();
  const auto kp = a.encoder.output_length(a.input_length);
  if (kp < 2)
    throw ShapeError("encoder output length " + std::to_string(kp) + " < 2 for input length " +
                     std::to_string(a.input_length) + "; minimum input length is " +
                     std::to_string(a.encoder.min_input_length()));
  a.context.input_dim = a.encoder.feature_channels();
  a.discriminator.input_channels = a.encoder.feature_channels();
  a.discriminator.max_length = std::max(a.discriminator.max_length, kp);
  a.horizon = std::max<std::size_t>(1, std::min(a.horizon, kp / 4 == 0 ? 1 : kp / 4));
  a.discriminator.validate();
}

// ---------------------------------------------------------------------- encoder

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.input_channels;
    for (std::size_t w : cfg_.layer_widths()) {
      blocks_.emplace_back(in, w, cfg_.kernel_size, cfg_.stride, cfg_.pad(), rng);
      in = w;
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  /// Output shape for a batch of `batch` samples of length `length`.
  Shape output_shape(std::size_t batch, std::size_t length) const {
    return {batch, cfg_.feature_channels(), cfg_.output_length(length)};
  }

  /// x [B x M x K] -> H [B x C_f x K']
  Var operator()(const Var& x, bool training) {
    const auto& s = x->shape();
    if (s.size() != 3 || s[1] != cfg_.input_channels)
      throw ShapeError("encode: expected [B x " + std::to_string(cfg_.input_channels) + " x K], got " +
                       to_string(s));
    if (cfg_.output_length(s[2]) < 2)
      throw ShapeError("encode: input length " + std::to_string(s[2]) +
                       " too short for the receptive field; minimum K is " +
                       std::to_string(cfg_.min_input_length()));
    Var h = x;
    for (auto& b : blocks_) h = b(h, training);
    return h;
  }

  void params(std::vector<ParamRef>& out, const std::string& prefix = "encoder") {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].params(out, prefix + ".block" + std::to_string(i));
  }
  void buffers(std::vector<BufferRef>& out, const std::string& prefix = "encoder") {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].buffers(out, prefix + ".block" + std::to_string(i));
  }

 private:
  EncoderConfig cfg_;
  std::vector<nn::ConvBlock> blocks_;
};

// ------------------------------------------------------------------ context net

/// Gated recurrent summarizer; returns the final hidden state of the top layer.
class ContextNet {
 public:
  struct Layer {
    nn::Linear xr, xz, xn;  // input projections
    nn::Linear hr, hz, hn;  // recurrent projections
  };

  ContextNet() = default;
  ContextNet(const ContextNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    std::size_t in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const auto h = cfg.hidden_dim;
      // PyTorch-style bound uses the hidden size for every GRU weight.
      auto lin = [&](std::size_t i) {
        nn::Linear x(i, h, rng);
        x.weight->value = nn::uniform_init({i, h}, h, rng);
        x.bias->value = nn::uniform_init({h}, h, rng);
        return x;
      };
      Layer layer;
      layer.xr = lin(in);
      layer.xz = lin(in);
      layer.xn = lin(in);
      layer.hr = lin(h);
      layer.hz = lin(h);
      layer.hn = lin(h);
      layers_.push_back(std::move(layer));
      in = h;
    }
  }

  const ContextNetConfig& config() const { return cfg_; }
  std::vector<Layer>& layers() { return layers_; }

  /// h_new = (1 - z) * n + z * h
  static Var cell(Layer& l, const Var& x, const Var& h) {
    auto r = ops::sigmoid(ops::add(l.xr(x), l.hr(h)));
    auto z = ops::sigmoid(ops::add(l.xz(x), l.hz(h)));
    auto n = ops::tanh(ops::add(l.xn(x), ops::mul(r, l.hn(h))));
    return ops::add(ops::mul(ops::one_minus(z), n), ops::mul(z, h));
  }

  /// H [B x C_f x T] -> r [B x hidden]
  Var operator()(const Var& features) {
    const auto& s = features->shape();
    if (s.size() != 3 || s[1] != cfg_.input_dim)
      throw ShapeError("summarize_context: expected [B x " + std::to_string(cfg_.input_dim) + " x T], got " +
                       to_string(s));
    if (s[2] == 0) throw ShapeError("summarize_context: empty sequence");
    const auto B = s[0], T = s[2];
    auto seq = ops::channels_last(features);
    std::vector<Var> inputs;
    inputs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) inputs.push_back(ops::time_step(seq, t));
    Var h;
    for (auto& layer : layers_) {
      h = constant(Tensor({B, cfg_.hidden_dim}));
      std::vector<Var> outputs;
      outputs.reserve(T);
      for (std::size_t t = 0; t < T; ++t) {
        h = cell(layer, inputs[t], h);
        outputs.push_back(h);
      }
      inputs = std::move(outputs);
    }
    return h;
  }

  void params(std::vector<ParamRef>& out, const std::string& prefix = "context") {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto p = prefix + ".layer" + std::to_string(i);
      auto& l = layers_[i];
      l.xr.params(out, p + ".x_r");
      l.xz.params(out, p + ".x_z");
      l.xn.params(out, p + ".x_n");
      l.hr.params(out, p + ".h_r");
      l.hz.params(out, p + ".h_z");
      l.hn.params(out, p + ".h_n");
    }
  }

 private:
  ContextNetConfig cfg_;
  std::vector<Layer> layers_;
};

// ------------------------------------------------------------ future predictors

/// One affine map per horizon offset k in 1..K_h, mapping the context vector to
/// a predicted latent of the encoder's feature width.
class FuturePredictor {
 public:
  FuturePredictor() = default;
  FuturePredictor(std::size_t horizon, std::size_t context_dim, std::size_t feature_dim, Rng& rng) {
    for (std::size_t k = 0; k < horizon; ++k) maps_.emplace_back(context_dim, feature_dim, rng);
  }

  std::size_t horizon() const { return maps_.size(); }
  nn::Linear& map(std::size_t k) { return maps_.at(k - 1); }

  /// z_{t+k} = affine_k(r_t), k is 1-based.
  Var operator()(std::size_t k, const Var& context) {
    if (k < 1 || k > maps_.size())
      throw ConfigError("predict_future: offset " + std::to_string(k) + " outside horizon 1.." +
                        std::to_string(maps_.size()));
    return maps_[k - 1](context);
  }

  void params(std::vector<ParamRef>& out, const std::string& prefix = "predictor") {
    for (std::size_t k = 0; k < maps_.size(); ++k) maps_[k].params(out, prefix + ".k" + std::to_string(k + 1));
  }

 private:
  std::vector<nn::Linear> maps_;
};

// ------------------------------------------------------------------- classifier

/// Mean over time followed by one affine layer.
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t feature_dim, std::size_t num_classes, Rng& rng) : fc_(feature_dim, num_classes, rng) {}

  std::size_t num_classes() const { return fc_.out_features(); }
  nn::Linear& head() { return fc_; }

  /// H [B x C_f x K'] -> logits [B x C]
  Var operator()(const Var& features) {
    const auto& s = features->shape();
    if (s.size() != 3 || s[1] != fc_.in_features())
      throw ShapeError("classify: expected features [B x " + std::to_string(fc_.in_features()) + " x K'], got " +
                       to_string(s));
    return fc_(ops::mean_axis2(features));
  }

  void params(std::vector<ParamRef>& out, const std::string& prefix = "classifier") { fc_.params(out, prefix + ".fc"); }

 private:
  nn::Linear fc_;
};

// ---------------------------------------------------------------- discriminators

/// Maps temporal features H [B x C_f x K'] to a source-domain probability [B x 1].
class DomainDiscriminator {
 public:
  virtual ~DomainDiscriminator() = default;
  virtual Var operator()(const Var& features) = 0;
  virtual std::vector<ParamRef> params() = 0;
  virtual std::unique_ptr<DomainDiscriminator> clone() const = 0;
  virtual std::string kind() const = 0;
};

/// Self-attention discriminator: linear projection, learned positions, layer
/// norm, a stack of pre-norm attention/feedforward blocks with residuals, mean
/// over time, and a logistic head.
class AttentionDiscriminator final : public DomainDiscriminator {
 public:
  struct Block {
    nn::LayerNorm norm_attn;
    nn::Linear q, k, v, o;
    nn::LayerNorm norm_ff;
    nn::Linear ff1, ff2;
  };

  AttentionDiscriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto d = cfg.hidden_dim;
    proj_ = nn::Linear(cfg.input_channels, d, rng);
    std::normal_distribution<double> pos_dist(0.0, 0.02);
    Tensor pos({cfg.max_length, d});
    for (auto& v : pos.data) v = pos_dist(rng);
    positions_ = parameter(std::move(pos));
    norm_in_ = nn::LayerNorm(d);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      Block b;
      b.norm_attn = nn::LayerNorm(d);
      b.q = nn::Linear(d, d, rng);
      b.k = nn::Linear(d, d, rng);
      b.v = nn::Linear(d, d, rng);
      b.o = nn::Linear(d, d, rng);
      b.norm_ff = nn::LayerNorm(d);
      b.ff1 = nn::Linear(d, cfg.feedforward_dim, rng);
      b.ff2 = nn::Linear(cfg.feedforward_dim, d, rng);
      blocks_.push_back(std::move(b));
    }
    head_ = nn::Linear(d, 1, rng);
    last_attention_.resize(cfg.num_layers);
    last_attention_input_.resize(cfg.num_layers);
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<Block>& blocks() { return blocks_; }

  /// Softmax weights [B x H x T x T] of the last forward pass, per layer.
  const Tensor& last_attention(std::size_t layer) const { return last_attention_.at(layer); }
  /// Normalized input [B x T x D] fed to the attention projections, per layer.
  const Tensor& last_attention_input(std::size_t layer) const { return last_attention_input_.at(layer); }

  Var logits(const Var& features) {
    const auto& s = features->shape();
    if (s.size() != 3 || s[1] != cfg_.input_channels)
      throw ShapeError("discriminate: expected [B x " + std::to_string(cfg_.input_channels) + " x K'], got " +
                       to_string(s));
    if (s[2] < 2) throw ShapeError("discriminate: sequence length must be at least 2");
    auto x = proj_(ops::channels_last(features));
    x = ops::add_positional(x, positions_);
    x = norm_in_(x);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto& b = blocks_[l];
      auto a_in = b.norm_attn(x);
      last_attention_input_[l] = a_in->value;
      auto att = ops::attention(b.q(a_in), b.k(a_in), b.v(a_in), cfg_.num_heads, &last_attention_[l]);
      x = ops::add(x, b.o(att));
      auto f = b.ff2(ops::relu(b.ff1(b.norm_ff(x))));
      x = ops::add(x, f);
    }
    return head_(ops::mean_axis1(x));
  }

  Var operator()(const Var& features) override { return ops::sigmoid(logits(features)); }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out;
    proj_.params(out, "disc.proj");
    out.push_back({"disc.positions", &positions_});
    norm_in_.params(out, "disc.norm_in");
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto p = "disc.block" + std::to_string(l);
      auto& b = blocks_[l];
      b.norm_attn.params(out, p + ".norm_attn");
      b.q.params(out, p + ".q");
      b.k.params(out, p + ".k");
      b.v.params(out, p + ".v");
      b.o.params(out, p + ".o");
      b.norm_ff.params(out, p + ".norm_ff");
      b.ff1.params(out, p + ".ff1");
      b.ff2.params(out, p + ".ff2");
    }
    head_.params(out, "disc.head");
    return out;
  }

  std::unique_ptr<DomainDiscriminator> clone() const override {
    auto c = std::make_unique<AttentionDiscriminator>(*this);
    nn::rebind(c->params());
    return c;
  }

  std::string kind() const override { return "attention"; }

 private:
  DiscriminatorConfig cfg_;
  nn::Linear proj_;
  Var positions_;
  nn::LayerNorm norm_in_;
  std::vector<Block> blocks_;
  nn::Linear head_;
  std::vector<Tensor> last_attention_;
  std::vector<Tensor> last_attention_input_;
};

/// Two-layer fully connected discriminator on time-mean-pooled features.
class PooledDiscriminator final : public DomainDiscriminator {
 public:
  PooledDiscriminator(std::size_t feature_dim, std::size_t hidden, Rng& rng)
      : fc1_(feature_dim, hidden, rng), fc2_(hidden, 1, rng) {}

  Var operator()(const Var& features) override {
    const auto& s = features->shape();
    if (s.size() != 3 || s[1] != fc1_.in_features())
      throw ShapeError("discriminate: feature width mismatch, got " + to_string(s));
    return ops::sigmoid(fc2_(ops::relu(fc1_(ops::mean_axis2(features)))));
  }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out;
    fc1_.params(out, "disc.fc1");
    fc2_.params(out, "disc.fc2");
    return out;
  }

  std::unique_ptr<DomainDiscriminator> clone() const override {
    auto c = std::make_unique<PooledDiscriminator>(*this);
    nn::rebind(c->params());
    return c;
  }

  std::string kind() const override { return "pooled"; }

 private:
  nn::Linear fc1_, fc2_;
};

// ------------------------------------------------------------------ model bundle

enum class Role { Source, Target, Teacher };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::Source: return "source";
    case Role::Target: return "target";
    case Role::Teacher: return "teacher";
  }
  return "unknown";
}

inline Role role_from_string(const std::string& s) {
  if (s == "source") return Role::Source;
  if (s == "target") return Role::Target;
  if (s == "teacher") return Role::Teacher;
  throw ConfigError("unknown role tag '" + s + "'");
}

/// Encoder, context network, future predictors and classifier with a role
/// tag and per-sub-network trainability flags. Copying yields an independent
/// deep copy.
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(ArchitectureConfig arch, Rng& rng) : arch_(std::move(arch)) {
    reconcile(arch_);
    encoder = Encoder(arch_.encoder, rng);
    context = ContextNet(arch_.context, rng);
    predictor = FuturePredictor(arch_.horizon, arch_.context.hidden_dim, arch_.encoder.feature_channels(), rng);
    classifier = Classifier(arch_.encoder.feature_channels(), arch_.num_classes, rng);
  }

  ModelBundle(const ModelBundle& other)
      : encoder(other.encoder),
        context(other.context),
        predictor(other.predictor),
        classifier(other.classifier),
        role(other.role),
        step(other.step),
        arch_(other.arch_),
        trainable_(other.trainable_) {
    nn::rebind(params());
  }
  ModelBundle& operator=(const ModelBundle& other) {
    if (this != &other) {
      ModelBundle tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;

  enum class Part { Encoder, Context, Predictor, Classifier };

  const ArchitectureConfig& architecture() const { return arch_; }
  std::size_t feature_length() const { return arch_.encoder.output_length(arch_.input_length); }

  std::vector<ParamRef> params(Part part) {
    std::vector<ParamRef> out;
    switch (part) {
      case Part::Encoder: encoder.params(out); break;
      case Part::Context: context.params(out); break;
      case Part::Predictor: predictor.params(out); break;
      case Part::Classifier: classifier.params(out); break;
    }
    return out;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (auto p : all_parts()) {
      auto part = params(p);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  std::vector<BufferRef> buffers() {
    std::vector<BufferRef> out;
    encoder.buffers(out);
    return out;
  }

  /// Parameters and buffers as plain tensors, in a fixed order.
  std::vector<Tensor> state() {
    auto s = nn::snapshot(params());
    for (auto& b : buffers()) s.push_back(*b.tensor);
    return s;
  }

  void set_trainable(Part part, bool on) {
    trainable_[static_cast<int>(part)] = on;
    nn::set_requires_grad(params(part), on);
  }
  bool trainable(Part part) const { return trainable_[static_cast<int>(part)]; }

  void freeze_all() {
    for (auto p : all_parts()) set_trainable(p, false);
  }

  static constexpr std::array<Part, 4> all_parts() {
    return {Part::Encoder, Part::Context, Part::Predictor, Part::Classifier};
  }

  static std::string part_name(Part p) {
    switch (p) {
      case Part::Encoder: return "encoder";
      case Part::Context: return "context";
      case Part::Predictor: return "predictor";
      case Part::Classifier: return "classifier";
    }
    return "unknown";
  }

  Encoder encoder;
  ContextNet context;
  FuturePredictor predictor;
  Classifier classifier;
  Role role = Role::Source;
  long step = 0;

 private:
  ArchitectureConfig arch_;
  std::array<bool, 4> trainable_{true, true, true, true};
};

}  // namespace slarda
