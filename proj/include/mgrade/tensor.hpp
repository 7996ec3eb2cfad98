#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mgrade/errors.hpp"

namespace mgrade {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

/// Dense row-major tensor. All public operations either produce finite
/// values or throw NumericError; shape mismatches throw ShapeError naming
/// both shapes. Binary elementwise ops broadcast only when the right
/// operand's shape is a trailing suffix of the left operand's shape.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is f32/f64 only");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: " + std::to_string(data_.size()) + " elements do not fill shape " +
                       shape_str(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), std::vector<T>(data)) {}

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same data, new shape; element count must be preserved.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* context) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(std::string(context) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

namespace detail {

// Right operand must have a shape equal to a trailing suffix of the left's.
template <typename T>
inline std::size_t broadcast_period(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(sb) +
                     " does not trail-broadcast against " + shape_str(sa));
  }
  return b.numel();
}

template <typename T, typename F>
inline Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  const std::size_t period = broadcast_period(a, b, op);
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (period == a.numel()) {
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], pb[i]);
  } else if (period == 0) {
    throw ShapeError(std::string(op) + ": empty broadcast operand");
  } else {
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], pb[i % period]);
  }
  check_finite(out, op);
  return out;
}

}  // namespace detail

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
inline Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  check_finite(out, "scale");
  return out;
}

template <typename T>
inline Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a[i]));
  check_finite(out, "sigmoid");
  return out;
}

template <typename T>
inline Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return out;
}

/// C = A @ B. A may have any rank >= 1 as long as its last dimension matches
/// B's first; B must be 2-D. Leading dimensions of A are treated as rows.
template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t rows = a.numel() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor<T> out(std::move(out_shape));
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* arow = pa + r * k;
    T* orow = po + r * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");
  return out;
}

template <typename T>
inline Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

/// Copy of the half-open index range [start, stop) along the given axis.
template <typename T>
inline Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t stop) {
  if (axis >= a.rank() || start > stop || stop > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = stop - start;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  Tensor<T> out(out_shape);
  const std::size_t in_stride = a.dim(axis) * inner;
  const std::size_t out_stride = (stop - start) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.data() + o * in_stride + start * inner;
    std::copy(src, src + out_stride, out.data() + o * out_stride);
  }
  return out;
}

template <typename T>
inline T mean_all(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  T s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return s / static_cast<T>(a.numel());
}

/// Mean over the last axis; result drops that axis.
template <typename T>
inline Tensor<T> reduce_mean(const Tensor<T>& a) {
  if (a.rank() == 0 || a.dim(a.rank() - 1) == 0) {
    throw ShapeError("reduce_mean: degenerate shape " + shape_str(a.shape()));
  }
  const std::size_t inner = a.dim(a.rank() - 1);
  const std::size_t rows = a.numel() / inner;
  Tensor<T> out(Shape(a.shape().begin(), a.shape().end() - 1));
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    const T* p = a.data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) s += p[i];
    out[r] = s / static_cast<T>(inner);
  }
  check_finite(out, "reduce_mean");
  return out;
}

/// Population variance over the last axis; result drops that axis.
template <typename T>
inline Tensor<T> reduce_var(const Tensor<T>& a) {
  const Tensor<T> mu = reduce_mean(a);
  const std::size_t inner = a.dim(a.rank() - 1);
  const std::size_t rows = a.numel() / inner;
  Tensor<T> out(mu.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    const T* p = a.data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      const T d = p[i] - mu[r];
      s += d * d;
    }
    out[r] = s / static_cast<T>(inner);
  }
  check_finite(out, "reduce_var");
  return out;
}

/// Numerically shifted softmax over the last axis.
template <typename T>
inline Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t inner = a.dim(a.rank() - 1);
  const std::size_t rows = a.numel() / inner;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = a.data() + r * inner;
    T* q = out.data() + r * inner;
    T mx = p[0];
    for (std::size_t i = 1; i < inner; ++i) mx = std::max(mx, p[i]);
    T z = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      q[i] = std::exp(p[i] - mx);
      z += q[i];
    }
    for (std::size_t i = 0; i < inner; ++i) q[i] /= z;
  }
  check_finite(out, "softmax");
  return out;
}

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Internal row-major kernels shared by the layer implementations. They act on
// raw spans so (B, T, C) activations can be consumed without reshaping.
namespace rows {

/// y(rows, out) = x(rows, in) * w(out, in)^T [+ bias(out)]
template <typename T>
inline void linear(const T* x, std::size_t nrows, std::size_t in, const T* w, std::size_t out,
                   const T* bias, T* y) {
  for (std::size_t r = 0; r < nrows; ++r) {
    T* yr = y + r * out;
    if (bias) {
      std::copy(bias, bias + out, yr);
    } else {
      std::fill(yr, yr + out, T(0));
    }
  }
  // Accumulate x[r][i] * w[o][i] with the transposed weight so the inner
  // loop walks contiguous output elements.
  std::vector<T> wt(in * out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = w[o * in + i];
  for (std::size_t r = 0; r < nrows; ++r) {
    const T* xr = x + r * in;
    T* yr = y + r * out;
    for (std::size_t i = 0; i < in; ++i) {
      const T xv = xr[i];
      const T* wrow = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wrow[o];
    }
  }
}

/// gw(out, in) += gy(rows, out)^T * x(rows, in); gb(out) += column sums of gy;
/// gx(rows, in) += gy(rows, out) * w(out, in).
template <typename T>
inline void linear_backward(const T* x, std::size_t nrows, std::size_t in, const T* w,
                            std::size_t out, const T* gy, T* gw, T* gb, T* gx) {
  for (std::size_t r = 0; r < nrows; ++r) {
    const T* xr = x + r * in;
    const T* gr = gy + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = gr[o];
      if (g == T(0)) continue;
      T* gwrow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) gwrow[i] += g * xr[i];
    }
    if (gb) {
      for (std::size_t o = 0; o < out; ++o) gb[o] += gr[o];
    }
    if (gx) {
      T* gxr = gx + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const T g = gr[o];
        if (g == T(0)) continue;
        const T* wrow = w + o * in;
        for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wrow[i];
      }
    }
  }
}

}  // namespace rows

}  // namespace mgrade
