#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mgrade/errors.hpp"
#include "mgrade/rng.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// y = W x (+ b). W is stored (out, in). The decoder of the network is
/// instantiated without a bias; the encoder and gate projections carry one.
template <typename T>
struct LinearParams {
  Tensor<T> w;  // (out, in)
  Tensor<T> b;  // (out) or empty
  bool has_bias = true;

  std::size_t fan_in() const { return w.dim(1); }
  std::size_t fan_out() const { return w.dim(0); }
};

template <typename T>
inline LinearParams<T> make_linear(std::size_t out, std::size_t in, bool bias, Rng& rng) {
  LinearParams<T> p;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
  p.w = rng.uniform_tensor<T>(-bound, bound, Shape{out, in});
  p.has_bias = bias;
  if (bias) p.b = Tensor<T>(Shape{out});
  return p;
}

template <typename T>
inline Tensor<T> linear_forward(const LinearParams<T>& p, const Tensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() != p.fan_in()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in fan-in " +
                     std::to_string(p.fan_in()));
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(p.fan_out());
  Tensor<T> y(out_shape);
  rows::linear(x.data(), x.numel() / p.fan_in(), p.fan_in(), p.w.data(), p.fan_out(),
               p.has_bias ? p.b.data() : nullptr, y.data());
  check_finite(y, "linear");
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> w;
  Tensor<T> b;
  Tensor<T> x;
};

template <typename T>
inline LinearGrads<T> linear_backward(const LinearParams<T>& p, const Tensor<T>& x,
                                      const Tensor<T>& grad_y, bool want_gx = true) {
  LinearGrads<T> g;
  g.w = Tensor<T>(p.w.shape());
  if (p.has_bias) g.b = Tensor<T>(Shape{p.fan_out()});
  if (want_gx) g.x = Tensor<T>(x.shape());
  rows::linear_backward(x.data(), x.numel() / p.fan_in(), p.fan_in(), p.w.data(), p.fan_out(),
                        grad_y.data(), g.w.data(), p.has_bias ? g.b.data() : nullptr,
                        want_gx ? g.x.data() : nullptr);
  return g;
}

// ---------------------------------------------------------------------------
// Two-layer MLP with a fixed expansion factor of 2 and ReLU in between.
// Parameter count is exactly 4H^2 + 3H.
// ---------------------------------------------------------------------------

template <typename T>
struct MlpParams {
  Tensor<T> w1;  // (2H, H)
  Tensor<T> b1;  // (2H)
  Tensor<T> w2;  // (H, 2H)
  Tensor<T> b2;  // (H)

  std::size_t width() const { return w2.dim(0); }
};

template <typename T>
inline MlpParams<T> make_mlp(std::size_t h, Rng& rng) {
  MlpParams<T> p;
  const T bound1 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(h)));
  const T bound2 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(2 * h)));
  p.w1 = rng.uniform_tensor<T>(-bound1, bound1, Shape{2 * h, h});
  p.b1 = Tensor<T>(Shape{2 * h});
  p.w2 = rng.uniform_tensor<T>(-bound2, bound2, Shape{h, 2 * h});
  p.b2 = Tensor<T>(Shape{h});
  return p;
}

template <typename T>
struct MlpCache {
  Tensor<T> hidden;  // post-ReLU activations, (rows..., 2H)
};

template <typename T>
inline Tensor<T> mlp_forward(const MlpParams<T>& p, const Tensor<T>& x, MlpCache<T>* cache = nullptr) {
  const std::size_t h = p.width();
  if (x.shape().back() != h) {
    throw ShapeError("mlp: input " + shape_str(x.shape()) + " does not end in width " +
                     std::to_string(h));
  }
  Shape hid_shape(x.shape().begin(), x.shape().end() - 1);
  hid_shape.push_back(2 * h);
  Tensor<T> hidden(hid_shape);
  rows::linear(x.data(), x.numel() / h, h, p.w1.data(), 2 * h, p.b1.data(), hidden.data());
  for (std::size_t i = 0; i < hidden.numel(); ++i) hidden[i] = hidden[i] > T(0) ? hidden[i] : T(0);
  Tensor<T> y(x.shape());
  rows::linear(hidden.data(), x.numel() / h, 2 * h, p.w2.data(), h, p.b2.data(), y.data());
  check_finite(y, "mlp");
  if (cache) cache->hidden = std::move(hidden);
  return y;
}

template <typename T>
struct MlpGrads {
  Tensor<T> w1, b1, w2, b2, x;
};

template <typename T>
inline MlpGrads<T> mlp_backward(const MlpParams<T>& p, const Tensor<T>& x, const MlpCache<T>& cache,
                                const Tensor<T>& grad_y) {
  const std::size_t h = p.width();
  const std::size_t nrows = x.numel() / h;
  MlpGrads<T> g;
  g.w1 = Tensor<T>(p.w1.shape());
  g.b1 = Tensor<T>(p.b1.shape());
  g.w2 = Tensor<T>(p.w2.shape());
  g.b2 = Tensor<T>(p.b2.shape());
  g.x = Tensor<T>(x.shape());

  Tensor<T> ghidden(cache.hidden.shape());
  rows::linear_backward(cache.hidden.data(), nrows, 2 * h, p.w2.data(), h, grad_y.data(),
                        g.w2.data(), g.b2.data(), ghidden.data());
  // ReLU mask: the cached activations are post-ReLU, so zero entries gate.
  for (std::size_t i = 0; i < ghidden.numel(); ++i) {
    if (cache.hidden[i] <= T(0)) ghidden[i] = T(0);
  }
  rows::linear_backward(x.data(), nrows, h, p.w1.data(), 2 * h, ghidden.data(), g.w1.data(),
                        g.b1.data(), g.x.data());
  return g;
}

// ---------------------------------------------------------------------------
// Layer normalization over the channel dimension, per timestep and sample.
// ---------------------------------------------------------------------------

template <typename T>
struct NormParams {
  Tensor<T> gain;   // (H), initialized to 1
  Tensor<T> shift;  // (H), initialized to 0

  std::size_t width() const { return gain.dim(0); }
};

template <typename T>
inline NormParams<T> make_norm(std::size_t h) {
  NormParams<T> p;
  p.gain = Tensor<T>::full(Shape{h}, T(1));
  p.shift = Tensor<T>(Shape{h});
  return p;
}

template <typename T>
struct NormCache {
  Tensor<T> xhat;     // normalized pre-affine values
  Tensor<T> inv_std;  // one per row
};

template <typename T>
inline Tensor<T> layernorm_forward(const NormParams<T>& p, const Tensor<T>& x, T eps = T(1e-5),
                                   NormCache<T>* cache = nullptr) {
  const std::size_t h = p.width();
  if (h == 0) throw ShapeError("layernorm: zero channel width");
  if (x.shape().back() != h) {
    throw ShapeError("layernorm: input " + shape_str(x.shape()) + " does not end in width " +
                     std::to_string(h));
  }
  const std::size_t nrows = x.numel() / h;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std(Shape{nrows});
  for (std::size_t r = 0; r < nrows; ++r) {
    const T* xr = x.data() + r * h;
    T mu = 0;
    for (std::size_t i = 0; i < h; ++i) mu += xr[i];
    mu /= static_cast<T>(h);
    T var = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const T d = xr[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(h);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    T* xh = xhat.data() + r * h;
    T* yr = y.data() + r * h;
    for (std::size_t i = 0; i < h; ++i) {
      xh[i] = (xr[i] - mu) * is;
      yr[i] = xh[i] * p.gain[i] + p.shift[i];
    }
  }
  check_finite(y, "layernorm");
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
struct NormGrads {
  Tensor<T> gain, shift, x;
};

template <typename T>
inline NormGrads<T> layernorm_backward(const NormParams<T>& p, const NormCache<T>& cache,
                                       const Tensor<T>& grad_y) {
  const std::size_t h = p.width();
  const std::size_t nrows = grad_y.numel() / h;
  NormGrads<T> g;
  g.gain = Tensor<T>(Shape{h});
  g.shift = Tensor<T>(Shape{h});
  g.x = Tensor<T>(grad_y.shape());
  for (std::size_t r = 0; r < nrows; ++r) {
    const T* gy = grad_y.data() + r * h;
    const T* xh = cache.xhat.data() + r * h;
    const T is = cache.inv_std[r];
    T sum_g = 0, sum_gx = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const T gxh = gy[i] * p.gain[i];
      sum_g += gxh;
      sum_gx += gxh * xh[i];
      g.gain[i] += gy[i] * xh[i];
      g.shift[i] += gy[i];
    }
    const T inv_h = T(1) / static_cast<T>(h);
    T* gx = g.x.data() + r * h;
    for (std::size_t i = 0; i < h; ++i) {
      const T gxh = gy[i] * p.gain[i];
      gx[i] = is * (gxh - sum_g * inv_h - xh[i] * sum_gx * inv_h);
    }
  }
  return g;
}

inline std::size_t mlp_param_count(std::size_t h) { return 4 * h * h + 3 * h; }
inline std::size_t norm_param_count(std::size_t h) { return 2 * h; }

}  // namespace mgrade
