#pragma once

// Differentiable tensor operations. Every forward op pushes a node whose
// closure implements the adjoint rule; shapes are validated on entry and
// violations throw std::invalid_argument.

#include <cmath>
#include <string>
#include <vector>

#include "duralign/errors.hpp"
#include "duralign/graph.hpp"

namespace duralign {
namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T x) {
  // log(1 + e^x) without overflow
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <class T>
T sign_scalar(T x) {
  if (x > T(0)) return T(1);
  if (x < T(0)) return T(-1);
  return T(0);  // subgradient at the kink
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class T>
int add(Graph<T>& g, int a, int b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape == vb.shape, "add: shape mismatch");
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = va.v[i] + vb.v[i];
  return g.op("add", std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    auto& gb = gr.grad_acc(b);
    for (size_t i = 0; i < go.v.size(); ++i) {
      ga.v[i] += go.v[i];
      gb.v[i] += go.v[i];
    }
  });
}

template <class T>
int sub(Graph<T>& g, int a, int b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape == vb.shape, "sub: shape mismatch");
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = va.v[i] - vb.v[i];
  return g.op("sub", std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    auto& gb = gr.grad_acc(b);
    for (size_t i = 0; i < go.v.size(); ++i) {
      ga.v[i] += go.v[i];
      gb.v[i] -= go.v[i];
    }
  });
}

template <class T>
int mul(Graph<T>& g, int a, int b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape == vb.shape, "mul: shape mismatch");
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = va.v[i] * vb.v[i];
  return g.op("mul", std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& va = gr.value(a);
    const auto& vb = gr.value(b);
    auto& ga = gr.grad_acc(a);
    auto& gb = gr.grad_acc(b);
    for (size_t i = 0; i < go.v.size(); ++i) {
      ga.v[i] += go.v[i] * vb.v[i];
      gb.v[i] += go.v[i] * va.v[i];
    }
  });
}

/// k*x + c, elementwise with scalar coefficients.
template <class T>
int affine(Graph<T>& g, int a, double k, double c) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = static_cast<T>(k) * va.v[i] + static_cast<T>(c);
  return g.op("affine", std::move(out), {a}, [a, k](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += static_cast<T>(k) * go.v[i];
  });
}

template <class T>
int scale(Graph<T>& g, int a, double k) {
  return affine(g, a, k, 0.0);
}

template <class T>
int exp_op(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::exp(va.v[i]);
  return g.op("exp", std::move(out), {a}, [a](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& y = gr.value(self);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i] * y.v[i];
  });
}

/// |x| with sign(0) = 0.
template <class T>
int abs_op(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::abs(va.v[i]);
  return g.op("abs", std::move(out), {a}, [a](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& x = gr.value(a);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i] * detail::sign_scalar(x.v[i]);
  });
}

template <class T>
int sigmoid(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = detail::sigmoid_scalar(va.v[i]);
  return g.op("sigmoid", std::move(out), {a}, [a](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& y = gr.value(self);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i] * y.v[i] * (T(1) - y.v[i]);
  });
}

/// x * sigmoid(x)
template <class T>
int swish(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  std::vector<T> sig(va.v.size());
  for (size_t i = 0; i < out.v.size(); ++i) {
    sig[i] = detail::sigmoid_scalar(va.v[i]);
    out.v[i] = va.v[i] * sig[i];
  }
  return g.op("swish", std::move(out), {a}, [a, sig = std::move(sig)](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& x = gr.value(a);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) {
      T s = sig[i];
      ga.v[i] += go.v[i] * (s + x.v[i] * s * (T(1) - s));
    }
  });
}

template <class T>
int softplus(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  Tensor<T> out(va.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = detail::softplus_scalar(va.v[i]);
  return g.op("softplus", std::move(out), {a}, [a](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& x = gr.value(a);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i] * detail::sigmoid_scalar(x.v[i]);
  });
}

// ---------------------------------------------------------------------------
// reductions and shape plumbing

template <class T>
int sum(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  T s = 0;
  for (T x : va.v) s += x;
  return g.op("sum", Tensor<T>::scalar(s), {a}, [a](Graph<T>& gr, int self) {
    T go = gr.grad(self).v[0];
    auto& ga = gr.grad_acc(a);
    for (auto& x : ga.v) x += go;
  });
}

template <class T>
int reshape(Graph<T>& g, int a, Shape shape) {
  const auto& va = g.value(a);
  detail::require(shape_count(shape) == va.size(), "reshape: element count mismatch");
  Tensor<T> out(std::move(shape), va.v);
  return g.op("reshape", std::move(out), {a}, [a](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
  });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
int matmul(Graph<T>& g, int a, int b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.rank() == 2 && vb.rank() == 2, "matmul: rank-2 operands required");
  detail::require(va.dim(1) == vb.dim(0), "matmul: inner dimension mismatch");
  int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor<T> out(Shape{m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      T x = va.v[static_cast<size_t>(i) * k + p];
      if (x == T(0)) continue;
      const T* brow = &vb.v[static_cast<size_t>(p) * n];
      T* orow = &out.v[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return g.op("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& va = gr.value(a);
    const auto& vb = gr.value(b);
    auto& ga = gr.grad_acc(a);
    auto& gb = gr.grad_acc(b);
    // dA = dY * B^T
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        T s = 0;
        const T* grow = &go.v[static_cast<size_t>(i) * n];
        const T* brow = &vb.v[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
        ga.v[static_cast<size_t>(i) * k + p] += s;
      }
    // dB = A^T * dY
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        T x = va.v[static_cast<size_t>(i) * k + p];
        if (x == T(0)) continue;
        const T* grow = &go.v[static_cast<size_t>(i) * n];
        T* brow = &gb.v[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) brow[j] += x * grow[j];
      }
  });
}

template <class T>
int transpose(Graph<T>& g, int a) {
  const auto& va = g.value(a);
  detail::require(va.rank() == 2, "transpose: rank-2 operand required");
  int m = va.dim(0), n = va.dim(1);
  Tensor<T> out(Shape{n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.v[static_cast<size_t>(j) * m + i] = va.v[static_cast<size_t>(i) * n + j];
  return g.op("transpose", std::move(out), {a}, [a, m, n](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga.v[static_cast<size_t>(i) * n + j] += go.v[static_cast<size_t>(j) * m + i];
  });
}

/// x[n x din] * W[din x dout] + b[dout] broadcast over rows.
template <class T>
int linear(Graph<T>& g, int x, int w, int b) {
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const auto& vb = g.value(b);
  detail::require(vx.rank() == 2 && vw.rank() == 2 && vb.rank() == 1, "linear: bad operand ranks");
  detail::require(vx.dim(1) == vw.dim(0), "linear: input/weight dimension mismatch");
  detail::require(vw.dim(1) == vb.dim(0), "linear: weight/bias dimension mismatch");
  int n = vx.dim(0), din = vx.dim(1), dout = vw.dim(1);
  Tensor<T> out(Shape{n, dout});
  for (int i = 0; i < n; ++i) {
    T* orow = &out.v[static_cast<size_t>(i) * dout];
    for (int j = 0; j < dout; ++j) orow[j] = vb.v[static_cast<size_t>(j)];
    for (int p = 0; p < din; ++p) {
      T xv = vx.v[static_cast<size_t>(i) * din + p];
      if (xv == T(0)) continue;
      const T* wrow = &vw.v[static_cast<size_t>(p) * dout];
      for (int j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
    }
  }
  return g.op("linear", std::move(out), {x, w, b}, [x, w, b, n, din, dout](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& vx = gr.value(x);
    const auto& vw = gr.value(w);
    auto& gx = gr.grad_acc(x);
    auto& gw = gr.grad_acc(w);
    auto& gb = gr.grad_acc(b);
    for (int i = 0; i < n; ++i) {
      const T* grow = &go.v[static_cast<size_t>(i) * dout];
      for (int j = 0; j < dout; ++j) gb.v[static_cast<size_t>(j)] += grow[j];
      for (int p = 0; p < din; ++p) {
        const T* wrow = &vw.v[static_cast<size_t>(p) * dout];
        T s = 0;
        for (int j = 0; j < dout; ++j) s += grow[j] * wrow[j];
        gx.v[static_cast<size_t>(i) * din + p] += s;
        T xv = vx.v[static_cast<size_t>(i) * din + p];
        if (xv == T(0)) continue;
        T* gwrow = &gw.v[static_cast<size_t>(p) * dout];
        for (int j = 0; j < dout; ++j) gwrow[j] += xv * grow[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions

/// Same-length 1-D convolution along the row axis with zero padding.
/// x: [K x din], kernel: [w x din x dout] (w odd), bias: [dout].
template <class T>
int conv1d(Graph<T>& g, int x, int kernel, int bias) {
  const auto& vx = g.value(x);
  const auto& vk = g.value(kernel);
  const auto& vb = g.value(bias);
  detail::require(vx.rank() == 2 && vk.rank() == 3 && vb.rank() == 1, "conv1d: bad operand ranks");
  int K = vx.dim(0), din = vx.dim(1);
  int w = vk.dim(0);
  detail::require(w % 2 == 1, "conv1d: kernel width must be odd");
  detail::require(vk.dim(1) == din, "conv1d: kernel input dimension mismatch");
  int dout = vk.dim(2);
  detail::require(vb.dim(0) == dout, "conv1d: bias dimension mismatch");
  int half = w / 2;
  Tensor<T> out(Shape{K, dout});
  for (int t = 0; t < K; ++t) {
    T* orow = &out.v[static_cast<size_t>(t) * dout];
    for (int o = 0; o < dout; ++o) orow[o] = vb.v[static_cast<size_t>(o)];
    for (int tap = 0; tap < w; ++tap) {
      int src = t + tap - half;
      if (src < 0 || src >= K) continue;
      const T* xrow = &vx.v[static_cast<size_t>(src) * din];
      const T* kslab = &vk.v[static_cast<size_t>(tap) * din * dout];
      for (int i = 0; i < din; ++i) {
        T xv = xrow[i];
        if (xv == T(0)) continue;
        const T* krow = &kslab[static_cast<size_t>(i) * dout];
        for (int o = 0; o < dout; ++o) orow[o] += xv * krow[o];
      }
    }
  }
  return g.op("conv1d", std::move(out), {x, kernel, bias},
              [x, kernel, bias, K, din, dout, w, half](Graph<T>& gr, int self) {
                const auto& go = gr.grad(self);
                const auto& vx = gr.value(x);
                const auto& vk = gr.value(kernel);
                auto& gx = gr.grad_acc(x);
                auto& gk = gr.grad_acc(kernel);
                auto& gb = gr.grad_acc(bias);
                for (int t = 0; t < K; ++t) {
                  const T* grow = &go.v[static_cast<size_t>(t) * dout];
                  for (int o = 0; o < dout; ++o) gb.v[static_cast<size_t>(o)] += grow[o];
                  for (int tap = 0; tap < w; ++tap) {
                    int src = t + tap - half;
                    if (src < 0 || src >= K) continue;
                    const T* xrow = &vx.v[static_cast<size_t>(src) * din];
                    const T* kslab = &vk.v[static_cast<size_t>(tap) * din * dout];
                    T* gxrow = &gx.v[static_cast<size_t>(src) * din];
                    T* gkslab = &gk.v[static_cast<size_t>(tap) * din * dout];
                    for (int i = 0; i < din; ++i) {
                      const T* krow = &kslab[static_cast<size_t>(i) * dout];
                      T* gkrow = &gkslab[static_cast<size_t>(i) * dout];
                      T xv = xrow[i];
                      T s = 0;
                      for (int o = 0; o < dout; ++o) {
                        s += grow[o] * krow[o];
                        gkrow[o] += xv * grow[o];
                      }
                      gxrow[i] += s;
                    }
                  }
                }
              });
}

/// Depthwise conv along rows with per-channel kernels normalized by softmax
/// over the taps. x: [Tn x M], kernel (raw logits): [w x M].
template <class T>
int depthwise_softmax_conv(Graph<T>& g, int x, int kernel) {
  const auto& vx = g.value(x);
  const auto& vk = g.value(kernel);
  detail::require(vx.rank() == 2 && vk.rank() == 2, "depthwise conv: bad operand ranks");
  int Tn = vx.dim(0), M = vx.dim(1);
  int w = vk.dim(0);
  detail::require(w % 2 == 1, "depthwise conv: kernel width must be odd");
  detail::require(vk.dim(1) == M, "depthwise conv: channel mismatch");
  int half = w / 2;
  // softmax over taps per channel
  std::vector<T> alpha(static_cast<size_t>(w) * M);
  for (int m = 0; m < M; ++m) {
    T mx = vk.v[static_cast<size_t>(m)];
    for (int tap = 1; tap < w; ++tap) mx = std::max(mx, vk.v[static_cast<size_t>(tap) * M + m]);
    T denom = 0;
    for (int tap = 0; tap < w; ++tap) {
      T e = std::exp(vk.v[static_cast<size_t>(tap) * M + m] - mx);
      alpha[static_cast<size_t>(tap) * M + m] = e;
      denom += e;
    }
    for (int tap = 0; tap < w; ++tap) alpha[static_cast<size_t>(tap) * M + m] /= denom;
  }
  Tensor<T> out(Shape{Tn, M});
  for (int t = 0; t < Tn; ++t)
    for (int tap = 0; tap < w; ++tap) {
      int src = t + tap - half;
      if (src < 0 || src >= Tn) continue;
      const T* xrow = &vx.v[static_cast<size_t>(src) * M];
      const T* arow = &alpha[static_cast<size_t>(tap) * M];
      T* orow = &out.v[static_cast<size_t>(t) * M];
      for (int m = 0; m < M; ++m) orow[m] += arow[m] * xrow[m];
    }
  return g.op("dwconv", std::move(out), {x, kernel},
              [x, kernel, Tn, M, w, half, alpha = std::move(alpha)](Graph<T>& gr, int self) {
                const auto& go = gr.grad(self);
                const auto& vx = gr.value(x);
                auto& gx = gr.grad_acc(x);
                auto& gk = gr.grad_acc(kernel);
                std::vector<T> galpha(static_cast<size_t>(w) * M, T(0));
                for (int t = 0; t < Tn; ++t) {
                  const T* grow = &go.v[static_cast<size_t>(t) * M];
                  for (int tap = 0; tap < w; ++tap) {
                    int src = t + tap - half;
                    if (src < 0 || src >= Tn) continue;
                    const T* xrow = &vx.v[static_cast<size_t>(src) * M];
                    const T* arow = &alpha[static_cast<size_t>(tap) * M];
                    T* gxrow = &gx.v[static_cast<size_t>(src) * M];
                    T* garow = &galpha[static_cast<size_t>(tap) * M];
                    for (int m = 0; m < M; ++m) {
                      gxrow[m] += grow[m] * arow[m];
                      garow[m] += grow[m] * xrow[m];
                    }
                  }
                }
                // through the tap softmax, per channel
                for (int m = 0; m < M; ++m) {
                  T dot = 0;
                  for (int tap = 0; tap < w; ++tap)
                    dot += galpha[static_cast<size_t>(tap) * M + m] * alpha[static_cast<size_t>(tap) * M + m];
                  for (int tap = 0; tap < w; ++tap) {
                    size_t idx = static_cast<size_t>(tap) * M + m;
                    gk.v[idx] += alpha[idx] * (galpha[idx] - dot);
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// slicing / concatenation

template <class T>
int slice_cols(Graph<T>& g, int x, int c0, int c1) {
  const auto& vx = g.value(x);
  detail::require(vx.rank() == 2, "slice_cols: rank-2 operand required");
  int n = vx.dim(0), d = vx.dim(1);
  detail::require(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: bad column range");
  int dc = c1 - c0;
  Tensor<T> out(Shape{n, dc});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dc; ++j)
      out.v[static_cast<size_t>(i) * dc + j] = vx.v[static_cast<size_t>(i) * d + c0 + j];
  return g.op("slice_cols", std::move(out), {x}, [x, n, d, c0, dc](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& gx = gr.grad_acc(x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dc; ++j)
        gx.v[static_cast<size_t>(i) * d + c0 + j] += go.v[static_cast<size_t>(i) * dc + j];
  });
}

template <class T>
int concat_cols(Graph<T>& g, int a, int b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.rank() == 2 && vb.rank() == 2, "concat_cols: rank-2 operands required");
  detail::require(va.dim(0) == vb.dim(0), "concat_cols: row count mismatch");
  int n = va.dim(0), da = va.dim(1), db = vb.dim(1);
  Tensor<T> out(Shape{n, da + db});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < da; ++j)
      out.v[static_cast<size_t>(i) * (da + db) + j] = va.v[static_cast<size_t>(i) * da + j];
    for (int j = 0; j < db; ++j)
      out.v[static_cast<size_t>(i) * (da + db) + da + j] = vb.v[static_cast<size_t>(i) * db + j];
  }
  return g.op("concat_cols", std::move(out), {a, b}, [a, b, n, da, db](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad_acc(a);
    auto& gb = gr.grad_acc(b);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < da; ++j)
        ga.v[static_cast<size_t>(i) * da + j] += go.v[static_cast<size_t>(i) * (da + db) + j];
      for (int j = 0; j < db; ++j)
        gb.v[static_cast<size_t>(i) * db + j] += go.v[static_cast<size_t>(i) * (da + db) + da + j];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax

/// Softmax along `axis` with max-subtraction. Errors on non-finite input.
template <class T>
int softmax(Graph<T>& g, int x, int axis) {
  const auto& vx = g.value(x);
  detail::require(axis >= 0 && axis < vx.rank(), "softmax: axis out of range");
  detail::require(vx.all_finite(), "softmax: non-finite input");
  int64_t axis_n = vx.dim(axis);
  int64_t inner = 1;
  for (int i = axis + 1; i < vx.rank(); ++i) inner *= vx.dim(i);
  int64_t outer = vx.size() / (axis_n * inner);
  Tensor<T> out(vx.shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * axis_n * inner + in;
      T mx = vx.v[static_cast<size_t>(base)];
      for (int64_t k = 1; k < axis_n; ++k)
        mx = std::max(mx, vx.v[static_cast<size_t>(base + k * inner)]);
      T denom = 0;
      for (int64_t k = 0; k < axis_n; ++k) {
        T e = std::exp(vx.v[static_cast<size_t>(base + k * inner)] - mx);
        out.v[static_cast<size_t>(base + k * inner)] = e;
        denom += e;
      }
      for (int64_t k = 0; k < axis_n; ++k) out.v[static_cast<size_t>(base + k * inner)] /= denom;
    }
  return g.op("softmax", std::move(out), {x}, [x, axis_n, inner, outer](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& y = gr.value(self);
    auto& gx = gr.grad_acc(x);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * axis_n * inner + in;
        T dot = 0;
        for (int64_t k = 0; k < axis_n; ++k) {
          size_t idx = static_cast<size_t>(base + k * inner);
          dot += go.v[idx] * y.v[idx];
        }
        for (int64_t k = 0; k < axis_n; ++k) {
          size_t idx = static_cast<size_t>(base + k * inner);
          gx.v[idx] += y.v[idx] * (go.v[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// normalization

enum class NormMode { train, infer };

/// Batch normalization over the row (token/time) axis of x[n x d].
/// Running statistics live in the store under `prefix` + ".running_mean",
/// ".running_var", ".count" (non-trainable); gamma/beta under ".gamma",
/// ".beta". Training mode records a BnObservation on the graph; folding the
/// observation into the running statistics is the caller's job so batched
/// updates stay ordered.
template <class T>
void register_batch_norm(ParameterStore<T>& store, const std::string& prefix, int dim) {
  auto& gamma = store.create(prefix + ".gamma", Shape{dim});
  for (auto& x : gamma.v) x = T(1);
  store.create(prefix + ".beta", Shape{dim});
  store.create(prefix + ".running_mean", Shape{dim}, /*trainable=*/false);
  auto& rv = store.create(prefix + ".running_var", Shape{dim}, /*trainable=*/false);
  for (auto& x : rv.v) x = T(1);
  store.create(prefix + ".count", Shape{1}, /*trainable=*/false);
}

template <class T>
int batch_norm(Graph<T>& g, int x, ParameterStore<T>& store, const std::string& prefix,
               NormMode mode, double eps = 1e-5) {
  detail::require(g.value(x).rank() == 2, "batch_norm: rank-2 operand required");
  int n = g.value(x).dim(0), d = g.value(x).dim(1);
  int gamma = g.param(store, prefix + ".gamma");
  int beta = g.param(store, prefix + ".beta");
  detail::require(g.value(gamma).dim(0) == d, "batch_norm: feature dimension mismatch");
  // no nodes are pushed below until the final op, so these stay valid
  const auto& vx = g.value(x);

  Tensor<T> mean(Shape{d}), var(Shape{d});
  if (mode == NormMode::train) {
    for (int j = 0; j < d; ++j) {
      T mu = 0;
      for (int i = 0; i < n; ++i) mu += vx.v[static_cast<size_t>(i) * d + j];
      mu /= static_cast<T>(n);
      T s2 = 0;
      for (int i = 0; i < n; ++i) {
        T c = vx.v[static_cast<size_t>(i) * d + j] - mu;
        s2 += c * c;
      }
      mean.v[static_cast<size_t>(j)] = mu;
      var.v[static_cast<size_t>(j)] = s2 / static_cast<T>(n);
    }
    g.bn_observations.push_back({prefix, mean, var});
  } else {
    if (store.value(prefix + ".count").v[0] <= T(0))
      throw ConfigError("batch_norm: inference before any training step (" + prefix + ")");
    mean = store.value(prefix + ".running_mean");
    var = store.value(prefix + ".running_var");
  }

  std::vector<T> invstd(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j)
    invstd[static_cast<size_t>(j)] =
        T(1) / std::sqrt(var.v[static_cast<size_t>(j)] + static_cast<T>(eps));
  std::vector<T> xhat(vx.v.size());
  Tensor<T> out(vx.shape);
  const auto& vg = g.value(gamma);
  const auto& vb = g.value(beta);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      size_t idx = static_cast<size_t>(i) * d + j;
      xhat[idx] = (vx.v[idx] - mean.v[static_cast<size_t>(j)]) * invstd[static_cast<size_t>(j)];
      out.v[idx] = vg.v[static_cast<size_t>(j)] * xhat[idx] + vb.v[static_cast<size_t>(j)];
    }

  bool use_batch_stats = (mode == NormMode::train);
  return g.op("batch_norm", std::move(out), {x, gamma, beta},
              [x, gamma, beta, n, d, use_batch_stats, invstd = std::move(invstd),
               xhat = std::move(xhat)](Graph<T>& gr, int self) {
                const auto& go = gr.grad(self);
                const auto& vg = gr.value(gamma);
                auto& gx = gr.grad_acc(x);
                auto& gg = gr.grad_acc(gamma);
                auto& gb = gr.grad_acc(beta);
                for (int j = 0; j < d; ++j) {
                  T sum_dy = 0, sum_dy_xhat = 0;
                  for (int i = 0; i < n; ++i) {
                    size_t idx = static_cast<size_t>(i) * d + j;
                    sum_dy += go.v[idx];
                    sum_dy_xhat += go.v[idx] * xhat[idx];
                  }
                  gb.v[static_cast<size_t>(j)] += sum_dy;
                  gg.v[static_cast<size_t>(j)] += sum_dy_xhat;
                  T k = vg.v[static_cast<size_t>(j)] * invstd[static_cast<size_t>(j)];
                  if (use_batch_stats) {
                    T inv_n = T(1) / static_cast<T>(n);
                    for (int i = 0; i < n; ++i) {
                      size_t idx = static_cast<size_t>(i) * d + j;
                      gx.v[idx] +=
                          k * (go.v[idx] - sum_dy * inv_n - xhat[idx] * sum_dy_xhat * inv_n);
                    }
                  } else {
                    for (int i = 0; i < n; ++i) {
                      size_t idx = static_cast<size_t>(i) * d + j;
                      gx.v[idx] += k * go.v[idx];
                    }
                  }
                }
              });
}

/// Folds recorded batch statistics into the running statistics; call once per
/// utterance, in deterministic order.
template <class T>
void fold_bn_observation(ParameterStore<T>& store, const typename Graph<T>::BnObservation& obs,
                         double momentum) {
  auto& rm = store.value(obs.name + ".running_mean");
  auto& rv = store.value(obs.name + ".running_var");
  auto& count = store.value(obs.name + ".count");
  for (size_t j = 0; j < rm.v.size(); ++j) {
    rm.v[j] = static_cast<T>(momentum) * rm.v[j] + static_cast<T>(1.0 - momentum) * obs.mean.v[j];
    rv.v[j] = static_cast<T>(momentum) * rv.v[j] + static_cast<T>(1.0 - momentum) * obs.var.v[j];
  }
  count.v[0] += T(1);
}

/// Per-row normalization over features; stateless alternative to batch_norm
/// (config `norm = layer`). Reuses the same gamma/beta entries.
template <class T>
int layer_norm(Graph<T>& g, int x, ParameterStore<T>& store, const std::string& prefix,
               double eps = 1e-5) {
  detail::require(g.value(x).rank() == 2, "layer_norm: rank-2 operand required");
  int n = g.value(x).dim(0), d = g.value(x).dim(1);
  int gamma = g.param(store, prefix + ".gamma");
  int beta = g.param(store, prefix + ".beta");
  const auto& vx = g.value(x);  // no pushes until the final op
  std::vector<T> invstd(static_cast<size_t>(n));
  std::vector<T> xhat(vx.v.size());
  Tensor<T> out(vx.shape);
  const auto& vg = g.value(gamma);
  const auto& vb = g.value(beta);
  for (int i = 0; i < n; ++i) {
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += vx.v[static_cast<size_t>(i) * d + j];
    mu /= static_cast<T>(d);
    T s2 = 0;
    for (int j = 0; j < d; ++j) {
      T c = vx.v[static_cast<size_t>(i) * d + j] - mu;
      s2 += c * c;
    }
    T is = T(1) / std::sqrt(s2 / static_cast<T>(d) + static_cast<T>(eps));
    invstd[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      size_t idx = static_cast<size_t>(i) * d + j;
      xhat[idx] = (vx.v[idx] - mu) * is;
      out.v[idx] = vg.v[static_cast<size_t>(j)] * xhat[idx] + vb.v[static_cast<size_t>(j)];
    }
  }
  return g.op("layer_norm", std::move(out), {x, gamma, beta},
              [x, gamma, beta, n, d, invstd = std::move(invstd), xhat = std::move(xhat)](
                  Graph<T>& gr, int self) {
                const auto& go = gr.grad(self);
                const auto& vg = gr.value(gamma);
                auto& gx = gr.grad_acc(x);
                auto& gg = gr.grad_acc(gamma);
                auto& gb = gr.grad_acc(beta);
                for (int i = 0; i < n; ++i) {
                  T sum_dyg = 0, sum_dyg_xhat = 0;
                  for (int j = 0; j < d; ++j) {
                    size_t idx = static_cast<size_t>(i) * d + j;
                    T dyg = go.v[idx] * vg.v[static_cast<size_t>(j)];
                    sum_dyg += dyg;
                    sum_dyg_xhat += dyg * xhat[idx];
                    gb.v[static_cast<size_t>(j)] += go.v[idx];
                    gg.v[static_cast<size_t>(j)] += go.v[idx] * xhat[idx];
                  }
                  T inv_d = T(1) / static_cast<T>(d);
                  for (int j = 0; j < d; ++j) {
                    size_t idx = static_cast<size_t>(i) * d + j;
                    T dyg = go.v[idx] * vg.v[static_cast<size_t>(j)];
                    gx.v[idx] += invstd[static_cast<size_t>(i)] *
                                 (dyg - sum_dyg * inv_d - xhat[idx] * sum_dyg_xhat * inv_d);
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// lookup and sequence-specific ops

/// Row gather from an embedding table [vocab x M]; ids are constants.
template <class T>
int embedding(Graph<T>& g, int table, const std::vector<int>& ids) {
  const auto& vt = g.value(table);
  detail::require(vt.rank() == 2, "embedding: rank-2 table required");
  detail::require(!ids.empty(), "embedding: empty id sequence");
  int vocab = vt.dim(0), m = vt.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab) throw std::invalid_argument("embedding: token id out of range");
  int k = static_cast<int>(ids.size());
  Tensor<T> out(Shape{k, m});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j)
      out.v[static_cast<size_t>(i) * m + j] = vt.v[static_cast<size_t>(ids[static_cast<size_t>(i)]) * m + j];
  return g.op("embedding", std::move(out), {table}, [table, ids, m](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& gt = gr.grad_acc(table);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < m; ++j)
        gt.v[static_cast<size_t>(ids[i]) * m + j] += go.v[i * static_cast<size_t>(m) + j];
  });
}

/// s[k] = sum_{i<k} d[i].
template <class T>
int cumsum_exclusive(Graph<T>& g, int d) {
  const auto& vd = g.value(d);
  detail::require(vd.rank() == 1, "cumsum_exclusive: rank-1 operand required");
  int k = vd.dim(0);
  Tensor<T> out(Shape{k});
  T acc = 0;
  for (int i = 0; i < k; ++i) {
    out.v[static_cast<size_t>(i)] = acc;
    acc += vd.v[static_cast<size_t>(i)];
  }
  return g.op("cumsum_exclusive", std::move(out), {d}, [d, k](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& gd = gr.grad_acc(d);
    T acc = 0;
    for (int i = k - 1; i >= 0; --i) {
      gd.v[static_cast<size_t>(i)] += acc;  // d[i] feeds s[i+1..k-1]
      acc += go.v[static_cast<size_t>(i)];
    }
  });
}

/// Repeats a length-K vector across Tn rows -> [Tn x K].
template <class T>
int broadcast_rows(Graph<T>& g, int x, int rows) {
  const auto& vx = g.value(x);
  detail::require(vx.rank() == 1, "broadcast_rows: rank-1 operand required");
  detail::require(rows >= 1, "broadcast_rows: row count must be positive");
  int k = vx.dim(0);
  Tensor<T> out(Shape{rows, k});
  for (int t = 0; t < rows; ++t)
    for (int j = 0; j < k; ++j) out.v[static_cast<size_t>(t) * k + j] = vx.v[static_cast<size_t>(j)];
  return g.op("broadcast_rows", std::move(out), {x}, [x, rows, k](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    auto& gx = gr.grad_acc(x);
    for (int t = 0; t < rows; ++t)
      for (int j = 0; j < k; ++j) gx.v[static_cast<size_t>(j)] += go.v[static_cast<size_t>(t) * k + j];
  });
}

/// Per-cell input of the upsampler MLPs: rows indexed by (t,k) holding
/// [S_tk, E_tk, U_k] -> [(Tn*K) x (2+c)].
template <class T>
int grid_concat(Graph<T>& g, int s_grid, int e_grid, int u) {
  const auto& vs = g.value(s_grid);
  const auto& ve = g.value(e_grid);
  const auto& vu = g.value(u);
  detail::require(vs.rank() == 2 && ve.rank() == 2 && vu.rank() == 2, "grid_concat: bad ranks");
  detail::require(vs.shape == ve.shape, "grid_concat: grid shape mismatch");
  int tn = vs.dim(0), k = vs.dim(1);
  detail::require(vu.dim(0) == k, "grid_concat: token feature row mismatch");
  int c = vu.dim(1);
  int width = 2 + c;
  Tensor<T> out(Shape{tn * k, width});
  for (int t = 0; t < tn; ++t)
    for (int j = 0; j < k; ++j) {
      size_t cell = static_cast<size_t>(t) * k + j;
      T* row = &out.v[cell * width];
      row[0] = vs.v[cell];
      row[1] = ve.v[cell];
      const T* urow = &vu.v[static_cast<size_t>(j) * c];
      for (int q = 0; q < c; ++q) row[2 + q] = urow[q];
    }
  return g.op("grid_concat", std::move(out), {s_grid, e_grid, u},
              [s_grid, e_grid, u, tn, k, c, width](Graph<T>& gr, int self) {
                const auto& go = gr.grad(self);
                auto& gs = gr.grad_acc(s_grid);
                auto& ge = gr.grad_acc(e_grid);
                auto& gu = gr.grad_acc(u);
                for (int t = 0; t < tn; ++t)
                  for (int j = 0; j < k; ++j) {
                    size_t cell = static_cast<size_t>(t) * k + j;
                    const T* row = &go.v[cell * width];
                    gs.v[cell] += row[0];
                    ge.v[cell] += row[1];
                    T* gurow = &gu.v[static_cast<size_t>(j) * c];
                    for (int q = 0; q < c; ++q) gurow[q] += row[2 + q];
                  }
              });
}

/// einsum('tk,tkp->tp', W, C) with C stored as [(Tn*K) x P].
template <class T>
int context_reduce(Graph<T>& g, int w, int c) {
  const auto& vw = g.value(w);
  const auto& vc = g.value(c);
  detail::require(vw.rank() == 2 && vc.rank() == 2, "context_reduce: bad ranks");
  int tn = vw.dim(0), k = vw.dim(1), p = vc.dim(1);
  detail::require(vc.dim(0) == tn * k, "context_reduce: cell count mismatch");
  Tensor<T> out(Shape{tn, p});
  for (int t = 0; t < tn; ++t)
    for (int j = 0; j < k; ++j) {
      size_t cell = static_cast<size_t>(t) * k + j;
      T wv = vw.v[cell];
      if (wv == T(0)) continue;
      const T* crow = &vc.v[cell * p];
      T* orow = &out.v[static_cast<size_t>(t) * p];
      for (int q = 0; q < p; ++q) orow[q] += wv * crow[q];
    }
  return g.op("context_reduce", std::move(out), {w, c}, [w, c, tn, k, p](Graph<T>& gr, int self) {
    const auto& go = gr.grad(self);
    const auto& vw = gr.value(w);
    const auto& vc = gr.value(c);
    auto& gw = gr.grad_acc(w);
    auto& gc = gr.grad_acc(c);
    for (int t = 0; t < tn; ++t) {
      const T* grow = &go.v[static_cast<size_t>(t) * p];
      for (int j = 0; j < k; ++j) {
        size_t cell = static_cast<size_t>(t) * k + j;
        const T* crow = &vc.v[cell * p];
        T* gcrow = &gc.v[cell * p];
        T wv = vw.v[cell];
        T s = 0;
        for (int q = 0; q < p; ++q) {
          s += grow[q] * crow[q];
          gcrow[q] += grow[q] * wv;
        }
        gw.v[cell] += s;
      }
    }
  });
}

}  // namespace duralign
