#pragma once

#include <cstddef>
#include <vector>

#include "mgrade/errors.hpp"
#include "mgrade/layers.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

/// Minimal gated recurrent unit: h_t = (1 - z_t) * h_{t-1} + z_t * hcand_t
/// with input-only gates z_t = sigmoid(W_z x_t + b_z) and a linear candidate
/// hcand_t = W_h x_t + b_h. Parameter count is 2H^2 + 2H.
template <typename T>
struct GruParams {
  LinearParams<T> gate;       // W_z, b_z
  LinearParams<T> candidate;  // W_h, b_h

  std::size_t width() const { return gate.fan_out(); }
};

template <typename T>
inline GruParams<T> make_gru(std::size_t h, Rng& rng) {
  GruParams<T> p;
  p.gate = make_linear<T>(h, h, /*bias=*/true, rng);
  p.candidate = make_linear<T>(h, h, /*bias=*/true, rng);
  return p;
}

template <typename T>
struct GruGates {
  Tensor<T> z;      // (B, T, H), in (0, 1)
  Tensor<T> hcand;  // (B, T, H)
};

template <typename T>
inline GruGates<T> gru_gates(const GruParams<T>& p, const Tensor<T>& x) {
  GruGates<T> g;
  g.z = sigmoid(linear_forward(p.gate, x));
  g.hcand = linear_forward(p.candidate, x);
  return g;
}

namespace detail {

template <typename T>
inline void check_recurrence_shapes(const Tensor<T>& z, const Tensor<T>& hcand,
                                    const Tensor<T>& h0) {
  check_same_shape(z, hcand, "gru");
  if (z.rank() != 3) throw ShapeError("gru: gates must be (B, T, H), got " + shape_str(z.shape()));
  if (h0.shape() != Shape{z.dim(0), z.dim(2)}) {
    throw ShapeError("gru: h0 " + shape_str(h0.shape()) + " must be (B, H) = (" +
                     std::to_string(z.dim(0)) + ", " + std::to_string(z.dim(2)) + ")");
  }
}

}  // namespace detail

/// Exact sequential recurrence; constant memory in T per stream.
template <typename T>
inline Tensor<T> gru_recurrence_sequential(const Tensor<T>& z, const Tensor<T>& hcand,
                                           const Tensor<T>& h0) {
  detail::check_recurrence_shapes(z, hcand, h0);
  const std::size_t batch = z.dim(0), tlen = z.dim(1), width = z.dim(2);
  Tensor<T> h(z.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* prev = h0.data() + b * width;
    for (std::size_t t = 0; t < tlen; ++t) {
      const std::size_t at = (b * tlen + t) * width;
      T* hr = h.data() + at;
      const T* zr = z.data() + at;
      const T* cr = hcand.data() + at;
      for (std::size_t i = 0; i < width; ++i) {
        hr[i] = (T(1) - zr[i]) * prev[i] + zr[i] * cr[i];
      }
      prev = hr;
    }
  }
  check_finite(h, "gru_sequential");
  return h;
}

/// One scan element: h maps to a * h_prev + b. Composing an earlier element e1
/// with a later e2 gives (a2 * a1, a2 * b1 + b2); the operation is
/// associative, which is what licenses the parallel schedule.
template <typename T>
struct ScanElement {
  T a;
  T b;
};

template <typename T>
inline ScanElement<T> scan_combine(const ScanElement<T>& earlier, const ScanElement<T>& later) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

/// Blelloch-style two-phase inclusive scan over the time axis, elementwise
/// across (B, H). Produces outputs equal to the sequential recurrence up to
/// rounding; correctness is defined by that oracle, not the schedule.
template <typename T>
inline Tensor<T> gru_recurrence_scan(const Tensor<T>& z, const Tensor<T>& hcand,
                                     const Tensor<T>& h0) {
  detail::check_recurrence_shapes(z, hcand, h0);
  const std::size_t batch = z.dim(0), tlen = z.dim(1), width = z.dim(2);
  const std::size_t lanes = batch * width;

  std::size_t tpad = 1;
  while (tpad < tlen) tpad *= 2;

  // Lane-major working set: element t of lane l lives at [l * tpad + t].
  std::vector<ScanElement<T>> orig(lanes * tpad, ScanElement<T>{T(1), T(0)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tlen; ++t) {
      const std::size_t at = (b * tlen + t) * width;
      for (std::size_t i = 0; i < width; ++i) {
        orig[(b * width + i) * tpad + t] = {T(1) - z[at + i], z[at + i] * hcand[at + i]};
      }
    }
  }
  std::vector<ScanElement<T>> tree = orig;

  // Up-sweep: partial sums climb the implicit reduction tree.
  for (std::size_t stride = 1; stride < tpad; stride *= 2) {
    for (std::size_t t = 2 * stride - 1; t < tpad; t += 2 * stride) {
      for (std::size_t l = 0; l < lanes; ++l) {
        ScanElement<T>* lane = tree.data() + l * tpad;
        lane[t] = scan_combine(lane[t - stride], lane[t]);
      }
    }
  }
  // Down-sweep: convert to exclusive prefixes.
  for (std::size_t l = 0; l < lanes; ++l) {
    tree[l * tpad + tpad - 1] = {T(1), T(0)};
  }
  for (std::size_t stride = tpad / 2; stride >= 1; stride /= 2) {
    for (std::size_t t = 2 * stride - 1; t < tpad; t += 2 * stride) {
      for (std::size_t l = 0; l < lanes; ++l) {
        ScanElement<T>* lane = tree.data() + l * tpad;
        const ScanElement<T> left_sum = lane[t - stride];
        lane[t - stride] = lane[t];
        // The right child's exclusive prefix applies the parent's prefix
        // first, then the left subtree's total.
        lane[t] = scan_combine(lane[t], left_sum);
      }
    }
    if (stride == 1) break;
  }

  Tensor<T> h(z.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t l = b * width + i;
      const T h0v = h0[b * width + i];
      for (std::size_t t = 0; t < tlen; ++t) {
        const ScanElement<T> inc = scan_combine(tree[l * tpad + t], orig[l * tpad + t]);
        h[(b * tlen + t) * width + i] = inc.a * h0v + inc.b;
      }
    }
  }
  check_finite(h, "gru_scan");
  return h;
}

template <typename T>
inline Tensor<T> gru_sequential(const GruParams<T>& p, const Tensor<T>& x, const Tensor<T>& h0) {
  const GruGates<T> g = gru_gates(p, x);
  return gru_recurrence_sequential(g.z, g.hcand, h0);
}

template <typename T>
inline Tensor<T> gru_scan(const GruParams<T>& p, const Tensor<T>& x, const Tensor<T>& h0) {
  const GruGates<T> g = gru_gates(p, x);
  return gru_recurrence_scan(g.z, g.hcand, h0);
}

template <typename T>
struct GruCache {
  Tensor<T> z;
  Tensor<T> hcand;
  Tensor<T> h;
};

template <typename T>
inline Tensor<T> gru_forward(const GruParams<T>& p, const Tensor<T>& x, const Tensor<T>& h0,
                             GruCache<T>* cache) {
  GruGates<T> g = gru_gates(p, x);
  Tensor<T> h = gru_recurrence_sequential(g.z, g.hcand, h0);
  if (cache) {
    cache->z = std::move(g.z);
    cache->hcand = std::move(g.hcand);
    cache->h = h;
  }
  return h;
}

template <typename T>
struct GruGrads {
  LinearGrads<T> gate;
  LinearGrads<T> candidate;
  Tensor<T> x;
  Tensor<T> h0;
};

/// Reverse recurrence: lambda_{t-1} = lambda_t * (1 - z_t) + grad_h_{t-1}.
template <typename T>
inline GruGrads<T> gru_backward(const GruParams<T>& p, const Tensor<T>& x, const Tensor<T>& h0,
                                const GruCache<T>& cache, const Tensor<T>& grad_h) {
  check_same_shape(cache.h, grad_h, "gru_backward");
  const std::size_t batch = grad_h.dim(0), tlen = grad_h.dim(1), width = grad_h.dim(2);

  Tensor<T> dz(grad_h.shape());
  Tensor<T> dhc(grad_h.shape());
  GruGrads<T> out;
  out.h0 = Tensor<T>(h0.shape());

  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<T> carry(width, T(0));
    for (std::size_t t = tlen; t-- > 0;) {
      const std::size_t at = (b * tlen + t) * width;
      const T* prev = t == 0 ? h0.data() + b * width : cache.h.data() + at - width;
      for (std::size_t i = 0; i < width; ++i) {
        const T lambda = grad_h[at + i] + carry[i];
        const T zv = cache.z[at + i];
        dz[at + i] = lambda * (cache.hcand[at + i] - prev[i]);
        dhc[at + i] = lambda * zv;
        carry[i] = lambda * (T(1) - zv);
      }
    }
    for (std::size_t i = 0; i < width; ++i) out.h0[b * width + i] = carry[i];
  }

  // Through the sigmoid into the gate projection.
  for (std::size_t i = 0; i < dz.numel(); ++i) {
    const T zv = cache.z[i];
    dz[i] *= zv * (T(1) - zv);
  }
  out.gate = linear_backward(p.gate, x, dz);
  out.candidate = linear_backward(p.candidate, x, dhc);
  out.x = add(out.gate.x, out.candidate.x);
  return out;
}

inline std::size_t gru_param_count(std::size_t h) { return 2 * h * h + 2 * h; }

}  // namespace mgrade
