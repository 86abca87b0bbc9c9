#pragma once

// Layers, parameter bookkeeping, and the Adam optimizer.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "slarda/ops.hpp"

namespace slarda::nn {

using Rng = std::mt19937_64;

struct ParamRef {
  std::string name;
  Var* var;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

/// Uniform(-bound, bound) tensor, bound = 1/sqrt(fan_in).
inline Tensor uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

/// Replaces every parameter with a fresh leaf holding a copy of its value.
/// Used after copying a module so the copy does not alias the original.
inline void rebind(const std::vector<ParamRef>& refs) {
  for (const auto& r : refs) {
    const bool rg = (*r.var)->requires_grad;
    *r.var = std::make_shared<Node>((*r.var)->value, rg);
  }
}

inline void set_requires_grad(const std::vector<ParamRef>& refs, bool on) {
  for (const auto& r : refs) {
    (*r.var)->requires_grad = on;
    if (!on) (*r.var)->grad = Tensor();
  }
}

inline void zero_grad(const std::vector<ParamRef>& refs) {
  for (const auto& r : refs) (*r.var)->zero_grad();
}

/// Snapshot of parameter values, for audits and EMA bookkeeping.
inline std::vector<Tensor> snapshot(const std::vector<ParamRef>& refs) {
  std::vector<Tensor> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back((*r.var)->value);
  return out;
}

inline bool bitwise_equal(const std::vector<ParamRef>& refs, const std::vector<Tensor>& snap) {
  if (refs.size() != snap.size()) return false;
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (!((*refs[i].var)->value == snap[i])) return false;
  return true;
}

// ---------------------------------------------------------------------- layers

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(parameter(uniform_init({in, out}, in, rng))),
        bias(parameter(uniform_init({out}, in, rng))) {}

  std::size_t in_features() const { return weight->value.dim(0); }
  std::size_t out_features() const { return weight->value.dim(1); }

  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }

  void params(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gamma(parameter(Tensor({d}, 1.0))), beta(parameter(Tensor({d}))) {}

  Var operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta); }

  void params(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
};

/// Convolution -> batch normalization -> ReLU.
struct ConvBlock {
  Var weight;  // [out x in x k]
  Var bias;    // [out]
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;
  std::size_t stride = 1;
  std::size_t padding = 0;

  ConvBlock() = default;
  ConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad,
            Rng& rng)
      : weight(parameter(uniform_init({out, in, kernel}, in * kernel, rng))),
        bias(parameter(uniform_init({out}, in * kernel, rng))),
        gamma(parameter(Tensor({out}, 1.0))),
        beta(parameter(Tensor({out}))),
        running_mean({out}),
        running_var({out}, 1.0),
        stride(stride_),
        padding(pad) {}

  std::size_t kernel() const { return weight->value.dim(2); }
  std::size_t out_channels() const { return weight->value.dim(0); }

  Var operator()(const Var& x, bool training) {
    auto y = ops::conv1d(x, weight, bias, stride, padding);
    y = ops::batch_norm(y, gamma, beta, running_mean, running_var, training);
    return ops::relu(y);
  }

  void params(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
    out.push_back({prefix + ".bn_gamma", &gamma});
    out.push_back({prefix + ".bn_beta", &beta});
  }

  void buffers(std::vector<BufferRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }
};

// ------------------------------------------------------------------- optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 3e-4;
};

/// Adam with L2 weight decay folded into the gradient. Only parameters that
/// currently require a gradient are touched by step().
class Adam {
 public:
  Adam(std::vector<ParamRef> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back((*p.var)->value.shape);
      v_.emplace_back((*p.var)->value.shape);
    }
  }

  const AdamConfig& config() const { return cfg_; }

  void zero_grad() { nn::zero_grad(params_); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Node& p = **params_[i].var;
      if (!p.requires_grad || !p.has_grad()) continue;
      if (cfg_.learning_rate == 0.0) continue;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j] + cfg_.weight_decay * p.value[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        p.value[j] -= cfg_.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      }
    }
  }

  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace slarda::nn
