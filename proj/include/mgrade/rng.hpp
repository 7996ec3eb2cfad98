#pragma once

#include <cmath>
#include <cstdint>

#include "mgrade/errors.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

/// Counter-based pseudorandom stream built on the SplitMix64 finalizer.
/// State is (key, counter); output i depends only on (key, i), so identical
/// seeds replay identical sequences regardless of host scheduling, and
/// split() derives statistically independent substreams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1))), counter_(0) {}

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Child stream independent of this one; does not advance the parent.
  Rng split(std::uint64_t index) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(index + 0xBF58476D1CE4E5B9ULL));
    child.counter_ = 0;
    return child;
  }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) {
      throw UsageError("rng_uniform: lo (" + std::to_string(lo) + ") must be < hi (" +
                       std::to_string(hi) + ")");
    }
    return lo + next_double() * (hi - lo);
  }

  /// Standard normal via Box-Muller; draws two uniforms per sample pair.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  template <typename T>
  Tensor<T> uniform_tensor(T lo, T hi, Shape shape) {
    if (!(lo < hi)) {
      throw UsageError("rng_uniform: lo must be < hi");
    }
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) {
      out[i] = static_cast<T>(lo + next_double() * (static_cast<double>(hi) - lo));
    }
    return out;
  }

  template <typename T>
  Tensor<T> normal_tensor(T stddev, Shape shape) {
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(normal() * stddev);
    return out;
  }

  /// Deterministic Fisher-Yates shuffle.
  template <typename V>
  void shuffle(V& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace mgrade
