#pragma once

// Differentiable tensor operations. Each function computes its forward value
// eagerly and attaches a closure that propagates the output gradient into the
// parents that require one.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "slarda/autograd.hpp"

namespace slarda::ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

namespace detail {

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a->shape()) + " vs " +
                     to_string(b->shape()));
  }
}

template <class F>
Var unary(const Var& a, F&& f, std::function<double(double x, double y)> dfdx) {
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make_result(std::move(out), {a}, [a, dfdx](Node& self) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdx(a->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var& p : {a, b}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

/// 1 - a
inline Var one_minus(const Var& a) {
  return detail::unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Clamp into [lo, hi]; the gradient is zero where the clamp is active.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// ----------------------------------------------------------------- reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return make_result(Tensor::scalar(s), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buffer();
    const double go = self.grad[0];
    for (auto& v : g.data) v += go;
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  return scale(sum(a), 1.0 / n);
}

/// Weighted sum of scalars: sum_i w_i * s_i.
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size() || terms.empty())
    throw ShapeError("weighted_sum: term/weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i]->value.item();
  return make_result(Tensor::scalar(s), terms, [terms, weights](Node& self) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (!terms[i]->requires_grad) continue;
      terms[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

// -------------------------------------------------------------- linear algebra

/// a [n x k] times b [k x m]
inline Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a->shape()) + " and " +
                     to_string(b->shape()));
  const auto n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  Tensor out({n, m});
  MatMap(out.data.data(), n, m).noalias() =
      ConstMatMap(a->value.data.data(), n, k) * ConstMatMap(b->value.data.data(), k, m);
  return make_result(std::move(out), {a, b}, [a, b, n, k, m](Node& self) {
    ConstMatMap go(self.grad.data.data(), n, m);
    if (a->requires_grad)
      MatMap(a->grad_buffer().data.data(), n, k).noalias() +=
          go * ConstMatMap(b->value.data.data(), k, m).transpose();
    if (b->requires_grad)
      MatMap(b->grad_buffer().data.data(), k, m).noalias() +=
          ConstMatMap(a->value.data.data(), n, k).transpose() * go;
  });
}

inline Var transpose2d(const Var& a) {
  if (a->value.rank() != 2) throw ShapeError("transpose2d: rank-2 input required");
  const auto n = a->value.dim(0), m = a->value.dim(1);
  Tensor out({m, n});
  MatMap(out.data.data(), m, n) = ConstMatMap(a->value.data.data(), n, m).transpose();
  return make_result(std::move(out), {a}, [a, n, m](Node& self) {
    if (!a->requires_grad) return;
    MatMap(a->grad_buffer().data.data(), n, m) +=
        ConstMatMap(self.grad.data.data(), m, n).transpose();
  });
}

/// Affine map over the last axis: x [..., in] * W [in x out] + b [out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->shape();
  if (xs.empty() || w->value.rank() != 2 || xs.back() != w->value.dim(0) ||
      b->value.size() != w->value.dim(1))
    throw ShapeError("linear: input " + to_string(xs) + " incompatible with weight " +
                     to_string(w->shape()));
  const auto in = w->value.dim(0), outd = w->value.dim(1);
  const auto rows = x->value.size() / in;
  Shape os = xs;
  os.back() = outd;
  Tensor out(os);
  MatMap om(out.data.data(), rows, outd);
  om.noalias() = ConstMatMap(x->value.data.data(), rows, in) * ConstMatMap(w->value.data.data(), in, outd);
  om.rowwise() += ConstVecMap(b->value.data.data(), outd).transpose();
  return make_result(std::move(out), {x, w, b}, [x, w, b, rows, in, outd](Node& self) {
    ConstMatMap go(self.grad.data.data(), rows, outd);
    if (x->requires_grad)
      MatMap(x->grad_buffer().data.data(), rows, in).noalias() +=
          go * ConstMatMap(w->value.data.data(), in, outd).transpose();
    if (w->requires_grad)
      MatMap(w->grad_buffer().data.data(), in, outd).noalias() +=
          ConstMatMap(x->value.data.data(), rows, in).transpose() * go;
    if (b->requires_grad)
      VecMap(b->grad_buffer().data.data(), outd) += go.colwise().sum().transpose();
  });
}

// ----------------------------------------------------------------- convolution

inline std::size_t conv_output_length(std::size_t len, std::size_t kernel, std::size_t stride,
                                      std::size_t pad) {
  if (len + 2 * pad < kernel) return 0;
  return (len + 2 * pad - kernel) / stride + 1;
}

/// 1-D cross-correlation: x [B x Cin x L], w [Cout x Cin x k], b [Cout].
inline Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
  const auto& xs = x->shape();
  const auto& ws = w->shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[1] || b->value.size() != ws[0])
    throw ShapeError("conv1d: input " + to_string(xs) + " incompatible with kernel " + to_string(ws));
  const auto B = xs[0], cin = xs[1], L = xs[2], cout = ws[0], k = ws[2];
  const auto lout = conv_output_length(L, k, stride, pad);
  if (lout == 0)
    throw ShapeError("conv1d: input length " + std::to_string(L) + " shorter than kernel " +
                     std::to_string(k));
  const auto ck = cin * k;

  auto im2col = [=](const double* xb, RowMat& cols) {
    cols.setZero(ck, lout);
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t j = 0; j < k; ++j) {
        double* row = cols.data() + (c * k + j) * lout;
        const double* src = xb + c * L;
        for (std::size_t t = 0; t < lout; ++t) {
          const std::ptrdiff_t pos =
              static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) row[t] = src[pos];
        }
      }
  };

  Tensor out({B, cout, lout});
  ConstMatMap wm(w->value.data.data(), cout, ck);
  ConstVecMap bv(b->value.data.data(), cout);
  RowMat cols;
  for (std::size_t bi = 0; bi < B; ++bi) {
    im2col(x->value.data.data() + bi * cin * L, cols);
    MatMap om(out.data.data() + bi * cout * lout, cout, lout);
    om.noalias() = wm * cols;
    om.colwise() += bv;
  }

  return make_result(std::move(out), {x, w, b},
                     [=](Node& self) {
                       RowMat cols_b;
                       ConstMatMap wmat(w->value.data.data(), cout, ck);
                       for (std::size_t bi = 0; bi < B; ++bi) {
                         ConstMatMap go(self.grad.data.data() + bi * cout * lout, cout, lout);
                         if (w->requires_grad) {
                           im2col(x->value.data.data() + bi * cin * L, cols_b);
                           MatMap(w->grad_buffer().data.data(), cout, ck).noalias() +=
                               go * cols_b.transpose();
                         }
                         if (b->requires_grad)
                           VecMap(b->grad_buffer().data.data(), cout) += go.rowwise().sum();
                         if (x->requires_grad) {
                           RowMat dcols = wmat.transpose() * go;
                           double* gx = x->grad_buffer().data.data() + bi * cin * L;
                           for (std::size_t c = 0; c < cin; ++c)
                             for (std::size_t j = 0; j < k; ++j) {
                               const double* row = dcols.data() + (c * k + j) * lout;
                               for (std::size_t t = 0; t < lout; ++t) {
                                 const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + j) -
                                                            static_cast<std::ptrdiff_t>(pad);
                                 if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L))
                                   gx[c * L + pos] += row[t];
                               }
                             }
                         }
                       }
                     });
}

// --------------------------------------------------------------- normalization

/// Batch normalization of x [B x C x L] per channel over (B, L).
/// In training mode batch statistics are used and the running statistics are
/// updated in place; otherwise the running statistics normalize the input.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                      Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5) {
  const auto& xs = x->shape();
  if (xs.size() != 3 || gamma->value.size() != xs[1] || beta->value.size() != xs[1])
    throw ShapeError("batch_norm: input " + to_string(xs) + " incompatible with affine params");
  const auto B = xs[0], C = xs[1], L = xs[2];
  const double n = static_cast<double>(B * L);

  std::vector<double> mu(C), invstd(C);
  if (training) {
    if (B * L < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t t = 0; t < L; ++t) s += x->value.at(bi, c, t);
      const double m = s / n;
      double v = 0.0;
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = x->value.at(bi, c, t) - m;
          v += d * d;
        }
      const double var = v / n;
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * m;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * (v / (n - 1.0));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < L; ++t) {
        const double h = (x->value.at(bi, c, t) - mu[c]) * invstd[c];
        xhat.at(bi, c, t) = h;
        out.at(bi, c, t) = gamma->value[c] * h + beta->value[c];
      }

  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), invstd, training, B, C, L, n](Node& self) {
                       const Tensor& go = self.grad;
                       for (std::size_t c = 0; c < C; ++c) {
                         double sg = 0.0, sgh = 0.0;
                         for (std::size_t bi = 0; bi < B; ++bi)
                           for (std::size_t t = 0; t < L; ++t) {
                             sg += go.at(bi, c, t);
                             sgh += go.at(bi, c, t) * xhat.at(bi, c, t);
                           }
                         if (gamma->requires_grad) gamma->grad_buffer()[c] += sgh;
                         if (beta->requires_grad) beta->grad_buffer()[c] += sg;
                         if (!x->requires_grad) continue;
                         auto& gx = x->grad_buffer();
                         const double gm = gamma->value[c];
                         for (std::size_t bi = 0; bi < B; ++bi)
                           for (std::size_t t = 0; t < L; ++t) {
                             const double g = go.at(bi, c, t) * gm;
                             if (training) {
                               gx.at(bi, c, t) += invstd[c] / n *
                                                  (n * g - gm * sg - xhat.at(bi, c, t) * gm * sgh);
                             } else {
                               gx.at(bi, c, t) += g * invstd[c];
                             }
                           }
                       }
                     });
}

/// Layer normalization over the last axis.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const auto& xs = x->shape();
  const auto D = xs.back();
  if (gamma->value.size() != D || beta->value.size() != D)
    throw ShapeError("layer_norm: feature size mismatch");
  const auto rows = x->value.size() / D;
  Tensor xhat(xs), out(xs);
  std::vector<double> invstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x->value.data.data() + r * D;
    double m = 0.0;
    for (std::size_t j = 0; j < D; ++j) m += xr[j];
    m /= static_cast<double>(D);
    double v = 0.0;
    for (std::size_t j = 0; j < D; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<double>(D);
    invstd[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (xr[j] - m) * invstd[r];
      xhat[r * D + j] = h;
      out[r * D + j] = gamma->value[j] * h + beta->value[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), invstd, rows, D](Node& self) {
                       const double d = static_cast<double>(D);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* go = self.grad.data.data() + r * D;
                         const double* h = xhat.data.data() + r * D;
                         double sg = 0.0, sgh = 0.0;
                         for (std::size_t j = 0; j < D; ++j) {
                           const double g = go[j] * gamma->value[j];
                           sg += g;
                           sgh += g * h[j];
                           if (gamma->requires_grad) gamma->grad_buffer()[j] += go[j] * h[j];
                           if (beta->requires_grad) beta->grad_buffer()[j] += go[j];
                         }
                         if (!x->requires_grad) continue;
                         double* gx = x->grad_buffer().data.data() + r * D;
                         for (std::size_t j = 0; j < D; ++j) {
                           const double g = go[j] * gamma->value[j];
                           gx[j] += invstd[r] / d * (d * g - sg - h[j] * sgh);
                         }
                       }
                     });
}

// -------------------------------------------------------------- layout helpers

/// [B x C x T] -> [B x T x C]
inline Var channels_last(const Var& x) {
  const auto& xs = x->shape();
  if (xs.size() != 3) throw ShapeError("channels_last: rank-3 input required");
  const auto B = xs[0], C = xs[1], T = xs[2];
  Tensor out({B, T, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t) out.at(b, t, c) = x->value.at(b, c, t);
  return make_result(std::move(out), {x}, [x, B, C, T](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) g.at(b, c, t) += self.grad.at(b, t, c);
  });
}

/// Mean over axis 1 of [B x T x D] -> [B x D].
inline Var mean_axis1(const Var& x) {
  const auto& xs = x->shape();
  if (xs.size() != 3) throw ShapeError("mean_axis1: rank-3 input required");
  const auto B = xs[0], T = xs[1], D = xs[2];
  Tensor out({B, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) out.at(b, d) += x->value.at(b, t, d);
  for (auto& v : out.data) v /= static_cast<double>(T);
  return make_result(std::move(out), {x}, [x, B, T, D](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    const double inv = 1.0 / static_cast<double>(T);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) g.at(b, t, d) += self.grad.at(b, d) * inv;
  });
}

/// Mean over the last axis of [B x C x T] -> [B x C].
inline Var mean_axis2(const Var& x) {
  const auto& xs = x->shape();
  if (xs.size() != 3) throw ShapeError("mean_axis2: rank-3 input required");
  const auto B = xs[0], C = xs[1], T = xs[2];
  Tensor out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) s += x->value.at(b, c, t);
      out.at(b, c) = s / static_cast<double>(T);
    }
  return make_result(std::move(out), {x}, [x, B, C, T](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    const double inv = 1.0 / static_cast<double>(T);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) g.at(b, c, t) += self.grad.at(b, c) * inv;
  });
}

/// Time step t of [B x T x D] -> [B x D].
inline Var time_step(const Var& x, std::size_t t) {
  const auto& xs = x->shape();
  if (xs.size() != 3 || t >= xs[1]) throw ShapeError("time_step: index out of range");
  const auto B = xs[0], T = xs[1], D = xs[2];
  Tensor out({B, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) out.at(b, d) = x->value.at(b, t, d);
  return make_result(std::move(out), {x}, [x, t, B, T, D](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    (void)T;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t d = 0; d < D; ++d) g.at(b, t, d) += self.grad.at(b, d);
  });
}

/// Time steps [t0, t1) of x [B x C x T] -> [B x C x (t1 - t0)].
inline Var slice_time(const Var& x, std::size_t t0, std::size_t t1) {
  const auto& xs = x->shape();
  if (xs.size() != 3 || t0 >= t1 || t1 > xs[2]) throw ShapeError("slice_time: range out of bounds");
  const auto B = xs[0], C = xs[1], T = xs[2], n = t1 - t0;
  Tensor out({B, C, n});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < n; ++t) out.at(b, c, t) = x->value.at(b, c, t0 + t);
  return make_result(std::move(out), {x}, [x, t0, B, C, n, T](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    (void)T;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < n; ++t) g.at(b, c, t0 + t) += self.grad.at(b, c, t);
  });
}

/// Time step t of [B x C x T] -> [B x C].
inline Var select_time(const Var& x, std::size_t t) {
  const auto& xs = x->shape();
  if (xs.size() != 3 || t >= xs[2]) throw ShapeError("select_time: index out of range");
  const auto B = xs[0], C = xs[1];
  Tensor out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) out.at(b, c) = x->value.at(b, c, t);
  return make_result(std::move(out), {x}, [x, t, B, C](Node& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) g.at(b, c, t) += self.grad.at(b, c);
  });
}

/// Adds the first T rows of pos [Tmax x D] to every sample of x [B x T x D].
inline Var add_positional(const Var& x, const Var& pos) {
  const auto& xs = x->shape();
  if (xs.size() != 3 || pos->value.rank() != 2 || pos->value.dim(1) != xs[2] ||
      pos->value.dim(0) < xs[1])
    throw ShapeError("add_positional: sequence " + to_string(xs) + " exceeds positional table " +
                     to_string(pos->shape()));
  const auto B = xs[0], TD = xs[1] * xs[2];
  Tensor out = x->value;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < TD; ++i) out[b * TD + i] += pos->value[i];
  return make_result(std::move(out), {x, pos}, [x, pos, B, TD](Node& self) {
    if (x->requires_grad) {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pos->requires_grad) {
      auto& g = pos->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < TD; ++i) g[i] += self.grad[b * TD + i];
    }
  });
}

// ------------------------------------------------------------------- attention

/// Multi-head scaled dot-product self-attention core on already projected
/// q, k, v [B x T x D]; D is split into `heads` contiguous blocks.
/// When `weights_out` is non-null it receives the softmax weights [B x H x T x T].
inline Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                     Tensor* weights_out = nullptr) {
  detail::require_same(q, k, "attention");
  detail::require_same(q, v, "attention");
  const auto& s = q->shape();
  if (s.size() != 3 || heads == 0 || s[2] % heads != 0)
    throw ShapeError("attention: feature dim not divisible by head count");
  const auto B = s[0], T = s[1], D = s[2], dh = D / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor probs({B, heads, T, T});
  Tensor out({B, T, D});
  RowMat qh(T, dh), kh(T, dh), vh(T, dh), sc(T, T), oh(T, dh);
  auto gather = [&](const Tensor& src, std::size_t b, std::size_t h, RowMat& dst) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < dh; ++j) dst(t, j) = src.data[(b * T + t) * D + h * dh + j];
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      gather(q->value, b, h, qh);
      gather(k->value, b, h, kh);
      gather(v->value, b, h, vh);
      sc.noalias() = qh * kh.transpose() * scale_f;
      for (std::size_t i = 0; i < T; ++i) {
        const double mx = sc.row(i).maxCoeff();
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) z += (sc(i, j) = std::exp(sc(i, j) - mx));
        sc.row(i) /= z;
      }
      std::copy(sc.data(), sc.data() + T * T, probs.data.data() + (b * heads + h) * T * T);
      oh.noalias() = sc * vh;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < dh; ++j) out.data[(b * T + t) * D + h * dh + j] = oh(t, j);
    }
  if (weights_out) *weights_out = probs;

  return make_result(
      std::move(out), {q, k, v}, [q, k, v, probs = std::move(probs), B, T, D, dh, heads, scale_f](Node& self) {
        RowMat qh(T, dh), kh(T, dh), vh(T, dh), go(T, dh), dp(T, T), ds(T, T);
        auto gather = [&](const Tensor& src, std::size_t b, std::size_t h, RowMat& dst) {
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) dst(t, j) = src.data[(b * T + t) * D + h * dh + j];
        };
        auto scatter_add = [&](Tensor& dst, std::size_t b, std::size_t h, const RowMat& src) {
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) dst.data[(b * T + t) * D + h * dh + j] += src(t, j);
        };
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMatMap p(probs.data.data() + (b * heads + h) * T * T, T, T);
            gather(self.grad, b, h, go);
            gather(q->value, b, h, qh);
            gather(k->value, b, h, kh);
            gather(v->value, b, h, vh);
            if (v->requires_grad) scatter_add(v->grad_buffer(), b, h, p.transpose() * go);
            dp.noalias() = go * vh.transpose();
            for (std::size_t i = 0; i < T; ++i) {
              const double dot = p.row(i).dot(dp.row(i));
              for (std::size_t j = 0; j < T; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale_f;
            }
            if (q->requires_grad) scatter_add(q->grad_buffer(), b, h, ds * kh);
            if (k->requires_grad) scatter_add(k->grad_buffer(), b, h, ds.transpose() * qh);
          }
      });
}

// ---------------------------------------------------------------------- losses

/// Row-wise softmax of a plain tensor [N x C]; no graph.
inline Tensor softmax_rows(const Tensor& logits) {
  const auto N = logits.dim(0), C = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t i = 0; i < N; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (p.at(i, c) = std::exp(logits.at(i, c) - mx));
    for (std::size_t c = 0; c < C; ++c) p.at(i, c) /= z;
  }
  return p;
}

/// Mean categorical cross-entropy over the selected rows of logits [N x C].
/// `rows[i]` is paired with `labels[i]`. An empty selection yields 0.
inline Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> rows,
                              std::span<const int> labels) {
  if (logits->value.rank() != 2) throw ShapeError("cross_entropy: logits must be rank 2");
  const auto N = logits->value.dim(0), C = logits->value.dim(1);
  if (rows.size() != labels.size()) throw ShapeError("cross_entropy: row/label count mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= N) throw ShapeError("cross_entropy: row index out of range");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C)
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(C) + ")");
  }
  if (rows.empty()) return constant(Tensor::scalar(0.0));

  const Tensor p = softmax_rows(logits->value);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // log-softmax computed from shifted logits for accuracy at saturation
    const double* lr = logits->value.data.data() + rows[i] * C;
    double mx = lr[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(lr[c] - mx);
    loss -= lr[labels[i]] - mx - std::log(z);
  }
  const double n = static_cast<double>(rows.size());
  loss /= n;
  std::vector<std::size_t> r(rows.begin(), rows.end());
  std::vector<int> l(labels.begin(), labels.end());
  return make_result(Tensor::scalar(loss), {logits}, [logits, p, r, l, C, n](Node& self) {
    if (!logits->requires_grad) return;
    auto& g = logits->grad_buffer();
    const double go = self.grad[0] / n;
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t c = 0; c < C; ++c) g.at(r[i], c) += go * p.at(r[i], c);
      g.at(r[i], static_cast<std::size_t>(l[i])) -= go;
    }
  });
}

/// Mean categorical cross-entropy over all rows.
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  if (logits->value.rank() != 2 || labels.size() != logits->value.dim(0))
    throw ShapeError("cross_entropy: one label per logits row required");
  std::vector<std::size_t> rows(labels.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return cross_entropy_rows(logits, rows, labels);
}

}  // namespace slarda::ops
