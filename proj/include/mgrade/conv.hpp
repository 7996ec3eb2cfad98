#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mgrade/errors.hpp"
#include "mgrade/rng.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

enum class ConvVariant { CD, EID, L };

inline const char* variant_name(ConvVariant v) {
  switch (v) {
    case ConvVariant::CD: return "cd";
    case ConvVariant::EID: return "eid";
    case ConvVariant::L: return "l";
  }
  return "?";
}

/// Depthwise causal temporal kernel. K taps per channel; tap i of channel h
/// has weight weights(h, i) and delay positions(h, i) in [0, gamma]. CD and
/// EID pin positions to a dilation grid; L keeps them real-valued and maps
/// them onto the integer grid with a Gaussian of width sigmas(h, i).
template <typename T>
struct KernelSpec {
  ConvVariant variant = ConvVariant::CD;
  std::size_t taps = 1;      // K
  std::size_t channels = 1;  // H
  std::size_t gamma = 0;     // max delay; the kernel spans gamma + 1 steps
  std::size_t dilation = 1;       // d   (CD)
  std::size_t base_dilation = 1;  // d_b (EID)
  std::size_t layer_index = 0;    // l   (EID)
  Tensor<T> weights;    // (H, K)
  Tensor<T> positions;  // (H, K)
  Tensor<T> sigmas;     // (H, K), variant L only

  bool learnable_positions() const { return variant == ConvVariant::L; }
};

enum class PositionInit { Dilated, Uniform };

template <typename T>
inline void validate_kernel_spec(const KernelSpec<T>& spec) {
  if (spec.taps == 0 || spec.channels == 0) {
    throw ShapeError("kernel spec: taps and channels must be positive");
  }
  if (spec.weights.shape() != Shape{spec.channels, spec.taps} ||
      spec.positions.shape() != Shape{spec.channels, spec.taps}) {
    throw ShapeError("kernel spec: weights/positions must be (H, K) = (" +
                     std::to_string(spec.channels) + ", " + std::to_string(spec.taps) + ")");
  }
  for (std::size_t i = 0; i < spec.positions.numel(); ++i) {
    const T p = spec.positions[i];
    if (!(p >= T(0) && p <= static_cast<T>(spec.gamma))) {
      throw ShapeError("kernel spec: position " + std::to_string(static_cast<double>(p)) +
                       " outside [0, " + std::to_string(spec.gamma) + "]");
    }
  }
  if (spec.variant == ConvVariant::L) {
    if (spec.sigmas.shape() != Shape{spec.channels, spec.taps}) {
      throw ShapeError("kernel spec: variant L needs per-tap sigmas (H, K)");
    }
    for (std::size_t i = 0; i < spec.sigmas.numel(); ++i) {
      if (!(spec.sigmas[i] > T(0))) throw ShapeError("kernel spec: sigma must be positive");
    }
  }
}

/// Fixed-grid delay for CD/EID variants: d*i, or d_b*2^l*i.
inline std::size_t grid_delay(ConvVariant variant, std::size_t dilation, std::size_t base_dilation,
                              std::size_t layer_index, std::size_t tap) {
  if (variant == ConvVariant::CD) return dilation * tap;
  return base_dilation * (std::size_t{1} << layer_index) * tap;
}

template <typename T>
inline KernelSpec<T> make_kernel_spec(ConvVariant variant, std::size_t channels, std::size_t taps,
                                      std::size_t dilation, std::size_t base_dilation,
                                      std::size_t layer_index, std::size_t gamma, T sigma,
                                      PositionInit init, Rng& rng) {
  KernelSpec<T> spec;
  spec.variant = variant;
  spec.taps = taps;
  spec.channels = channels;
  spec.dilation = dilation;
  spec.base_dilation = base_dilation;
  spec.layer_index = layer_index;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(taps)));
  spec.weights = rng.uniform_tensor<T>(-bound, bound, Shape{channels, taps});
  spec.positions = Tensor<T>(Shape{channels, taps});
  if (variant == ConvVariant::L) {
    spec.gamma = gamma;
    spec.sigmas = Tensor<T>::full(Shape{channels, taps}, sigma);
    if (init == PositionInit::Uniform) {
      spec.positions = rng.uniform_tensor<T>(T(0), static_cast<T>(gamma) + T(1e-7),
                                             Shape{channels, taps});
      for (std::size_t i = 0; i < spec.positions.numel(); ++i) {
        spec.positions[i] = std::min(spec.positions[i], static_cast<T>(gamma));
      }
    } else {
      // Evenly dilated spread across [0, gamma].
      for (std::size_t h = 0; h < channels; ++h) {
        for (std::size_t i = 0; i < taps; ++i) {
          const double p = taps == 1 ? 0.0
                                     : static_cast<double>(gamma) * static_cast<double>(i) /
                                           static_cast<double>(taps - 1);
          spec.positions.at2(h, i) = static_cast<T>(p);
        }
      }
    }
  } else {
    spec.gamma = grid_delay(variant, dilation, base_dilation, layer_index, taps - 1);
    for (std::size_t h = 0; h < channels; ++h) {
      for (std::size_t i = 0; i < taps; ++i) {
        spec.positions.at2(h, i) =
            static_cast<T>(grid_delay(variant, dilation, base_dilation, layer_index, i));
      }
    }
  }
  validate_kernel_spec(spec);
  return spec;
}

/// Gaussian interpolation weight of a tap at real position p on grid cell n.
template <typename T>
inline T interp_weight(T n, T p, T sigma) {
  const T z = (n - p) / sigma;
  return std::exp(T(-0.5) * z * z);
}

/// Dense kernel k of shape (H, gamma + 1): k[h][n] = sum_i w_i * c[n, p_i].
/// CD/EID taps are Kronecker deltas; variant L uses the full (untruncated)
/// Gaussian over [0, gamma].
template <typename T>
inline Tensor<T> materialize_kernel(const KernelSpec<T>& spec) {
  validate_kernel_spec(spec);
  Tensor<T> k(Shape{spec.channels, spec.gamma + 1});
  for (std::size_t h = 0; h < spec.channels; ++h) {
    T* row = k.data() + h * (spec.gamma + 1);
    for (std::size_t i = 0; i < spec.taps; ++i) {
      const T w = spec.weights.at2(h, i);
      const T p = spec.positions.at2(h, i);
      if (spec.variant == ConvVariant::L) {
        const T s = spec.sigmas.at2(h, i);
        for (std::size_t n = 0; n <= spec.gamma; ++n) {
          row[n] += w * interp_weight(static_cast<T>(n), p, s);
        }
      } else {
        row[static_cast<std::size_t>(p)] += w;
      }
    }
  }
  check_finite(k, "materialize_kernel");
  return k;
}

namespace detail {

template <typename T>
inline void check_conv_input(const KernelSpec<T>& spec, const Tensor<T>& u) {
  if (u.rank() != 3 || u.dim(2) != spec.channels) {
    throw ShapeError("conv: input " + shape_str(u.shape()) + " must be (B, T, H) with H = " +
                     std::to_string(spec.channels));
  }
}

}  // namespace detail

/// Depthwise causal convolution with implicit zero left-padding:
/// y[b, t, h] = sum_{n=0..gamma} k[h][n] * u[b, t - n, h].
template <typename T>
inline Tensor<T> conv_forward(const KernelSpec<T>& spec, const Tensor<T>& u) {
  detail::check_conv_input(spec, u);
  const std::size_t batch = u.dim(0), tlen = u.dim(1), width = u.dim(2);
  Tensor<T> y(u.shape());
  if (spec.variant == ConvVariant::L) {
    const Tensor<T> k = materialize_kernel(spec);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < tlen; ++t) {
        T* yr = y.data() + (b * tlen + t) * width;
        const std::size_t nmax = std::min<std::size_t>(spec.gamma, t);
        for (std::size_t n = 0; n <= nmax; ++n) {
          const T* ur = u.data() + (b * tlen + (t - n)) * width;
          const T* kr = k.data() + n;  // column n, strided by gamma + 1
          for (std::size_t h = 0; h < width; ++h) yr[h] += kr[h * (spec.gamma + 1)] * ur[h];
        }
      }
    }
  } else {
    // Integer taps; all channels share the tap grid, weights differ.
    for (std::size_t i = 0; i < spec.taps; ++i) {
      const std::size_t delay =
          grid_delay(spec.variant, spec.dilation, spec.base_dilation, spec.layer_index, i);
      const T* wcol = spec.weights.data() + i;  // weights(h, i), strided by K
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = delay; t < tlen; ++t) {
          T* yr = y.data() + (b * tlen + t) * width;
          const T* ur = u.data() + (b * tlen + (t - delay)) * width;
          for (std::size_t h = 0; h < width; ++h) yr[h] += wcol[h * spec.taps] * ur[h];
        }
      }
    }
  }
  check_finite(y, "conv_forward");
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;      // (B, T, H)
  Tensor<T> weights;    // (H, K)
  Tensor<T> positions;  // (H, K), variant L only
  Tensor<T> sigmas;     // (H, K), only when requested
};

/// Exact gradients of conv_forward. Position gradients exist only for
/// variant L; asking for them on a fixed-grid variant is an error.
template <typename T>
inline ConvGrads<T> conv_backward(const KernelSpec<T>& spec, const Tensor<T>& u,
                                  const Tensor<T>& grad_y, bool want_position_grads,
                                  bool want_sigma_grads = false) {
  detail::check_conv_input(spec, u);
  check_same_shape(u, grad_y, "conv_backward");
  if (want_position_grads && spec.variant != ConvVariant::L) {
    throw UsageError("conv_backward: position gradients require variant L, got " +
                     std::string(variant_name(spec.variant)));
  }
  const std::size_t batch = u.dim(0), tlen = u.dim(1), width = u.dim(2);
  ConvGrads<T> g;
  g.input = Tensor<T>(u.shape());
  g.weights = Tensor<T>(spec.weights.shape());
  if (want_position_grads) g.positions = Tensor<T>(spec.positions.shape());
  if (want_sigma_grads) g.sigmas = Tensor<T>(spec.sigmas.shape());

  if (spec.variant == ConvVariant::L) {
    // Route through the dense-kernel gradient: gk[h][n] = sum gy[t] u[t-n].
    const Tensor<T> k = materialize_kernel(spec);
    Tensor<T> gk(Shape{width, spec.gamma + 1});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < tlen; ++t) {
        const T* gyr = grad_y.data() + (b * tlen + t) * width;
        const std::size_t nmax = std::min<std::size_t>(spec.gamma, t);
        for (std::size_t n = 0; n <= nmax; ++n) {
          const T* ur = u.data() + (b * tlen + (t - n)) * width;
          T* gur = g.input.data() + (b * tlen + (t - n)) * width;
          for (std::size_t h = 0; h < width; ++h) {
            gk[h * (spec.gamma + 1) + n] += gyr[h] * ur[h];
            gur[h] += k[h * (spec.gamma + 1) + n] * gyr[h];
          }
        }
      }
    }
    for (std::size_t h = 0; h < width; ++h) {
      for (std::size_t i = 0; i < spec.taps; ++i) {
        const T w = spec.weights.at2(h, i);
        const T p = spec.positions.at2(h, i);
        const T s = spec.sigmas.at2(h, i);
        T gw = 0, gp = 0, gs = 0;
        for (std::size_t n = 0; n <= spec.gamma; ++n) {
          const T c = interp_weight(static_cast<T>(n), p, s);
          const T gkn = gk[h * (spec.gamma + 1) + n];
          const T d = static_cast<T>(n) - p;
          gw += gkn * c;
          gp += gkn * c * d / (s * s);
          gs += gkn * c * d * d / (s * s * s);
        }
        g.weights.at2(h, i) = gw;
        if (want_position_grads) g.positions.at2(h, i) = w * gp;
        if (want_sigma_grads) g.sigmas.at2(h, i) = w * gs;
      }
    }
  } else {
    for (std::size_t i = 0; i < spec.taps; ++i) {
      const std::size_t delay =
          grid_delay(spec.variant, spec.dilation, spec.base_dilation, spec.layer_index, i);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = delay; t < tlen; ++t) {
          const T* gyr = grad_y.data() + (b * tlen + t) * width;
          const T* ur = u.data() + (b * tlen + (t - delay)) * width;
          T* gur = g.input.data() + (b * tlen + (t - delay)) * width;
          for (std::size_t h = 0; h < width; ++h) {
            g.weights[h * spec.taps + i] += gyr[h] * ur[h];
            gur[h] += spec.weights[h * spec.taps + i] * gyr[h];
          }
        }
      }
    }
  }
  return g;
}

/// Projects variant-L positions back into [0, gamma]; fixed-grid variants
/// are untouched.
template <typename T>
inline void clamp_positions(KernelSpec<T>& spec) {
  if (spec.variant != ConvVariant::L) return;
  for (std::size_t i = 0; i < spec.positions.numel(); ++i) {
    spec.positions[i] = std::clamp(spec.positions[i], T(0), static_cast<T>(spec.gamma));
  }
}

/// Global receptive field of a layer stack: R = 1 + sum_l gamma_l, where
/// gamma_l is the layer's maximum delay (its kernel spans gamma_l + 1 steps).
template <typename T>
inline std::size_t receptive_field(const std::vector<KernelSpec<T>>& specs) {
  if (specs.empty()) throw UsageError("receptive_field: at least one layer required");
  std::size_t r = 1;
  for (const auto& spec : specs) r += spec.gamma;
  return r;
}

/// Circular store of the last gamma input vectors for one stream. Entry(1)
/// is the newest buffered input u_{t-1}, entry(gamma) the oldest.
template <typename T>
class ConvRingBuffer {
 public:
  ConvRingBuffer(std::size_t channels, std::size_t gamma)
      : channels_(channels), gamma_(gamma), store_(channels * std::max<std::size_t>(gamma, 1), T(0)),
        cursor_(0) {}

  std::size_t capacity() const { return gamma_; }
  std::size_t channels() const { return channels_; }

  const T* entry(std::size_t age) const {
    // age in [1, gamma]; slot of u_{t-age} given cursor_ points at u_{t-1}.
    const std::size_t slot = (cursor_ + gamma_ - (age - 1)) % gamma_;
    return store_.data() + slot * channels_;
  }

  void push(const T* u) {
    if (gamma_ == 0) return;
    cursor_ = (cursor_ + 1) % gamma_;
    std::copy(u, u + channels_, store_.data() + cursor_ * channels_);
  }

  void reset() {
    std::fill(store_.begin(), store_.end(), T(0));
    cursor_ = 0;
  }

 private:
  std::size_t channels_;
  std::size_t gamma_;
  std::vector<T> store_;
  std::size_t cursor_;
};

/// One streaming step: consumes u_t, emits y_t equal to the dense causal
/// convolution at step t, then records u_t in the buffer.
template <typename T>
inline Tensor<T> stream_step(ConvRingBuffer<T>& buf, const KernelSpec<T>& spec, const Tensor<T>& u_t,
                             const Tensor<T>& dense_kernel) {
  if (buf.capacity() != spec.gamma || buf.channels() != spec.channels) {
    throw ShapeError("stream_step: buffer capacity " + std::to_string(buf.capacity()) + "x" +
                     std::to_string(buf.channels()) + " does not match kernel (gamma " +
                     std::to_string(spec.gamma) + ", H " + std::to_string(spec.channels) + ")");
  }
  if (u_t.shape() != Shape{spec.channels}) {
    throw ShapeError("stream_step: input " + shape_str(u_t.shape()) + " must be (H)");
  }
  const std::size_t width = spec.channels;
  const std::size_t span = spec.gamma + 1;
  Tensor<T> y(Shape{width});
  for (std::size_t h = 0; h < width; ++h) y[h] = dense_kernel[h * span] * u_t[h];
  for (std::size_t n = 1; n <= spec.gamma; ++n) {
    const T* past = buf.entry(n);
    for (std::size_t h = 0; h < width; ++h) y[h] += dense_kernel[h * span + n] * past[h];
  }
  buf.push(u_t.data());
  check_finite(y, "stream_step");
  return y;
}

template <typename T>
inline Tensor<T> stream_step(ConvRingBuffer<T>& buf, const KernelSpec<T>& spec,
                             const Tensor<T>& u_t) {
  return stream_step(buf, spec, u_t, materialize_kernel(spec));
}

/// Buffer length the planner charges for a trained variant-L layer: enough
/// history to cover every Gaussian tap out to 3 sigma, never more than the
/// configured maximum delay.
template <typename T>
inline std::size_t effective_gamma(const KernelSpec<T>& spec) {
  if (spec.variant != ConvVariant::L) return spec.gamma;
  double reach = 0.0;
  for (std::size_t i = 0; i < spec.positions.numel(); ++i) {
    reach = std::max(reach, static_cast<double>(spec.positions[i]) +
                                3.0 * static_cast<double>(spec.sigmas[i]));
  }
  return std::min<std::size_t>(spec.gamma, static_cast<std::size_t>(std::ceil(reach)));
}

}  // namespace mgrade
