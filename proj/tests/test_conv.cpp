#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgrade/conv.hpp"
#include "mgrade/gradcheck.hpp"
#include "mgrade/rng.hpp"

using namespace mgrade;

namespace {

KernelSpec<double> cd_spec(std::size_t channels, std::size_t taps, std::size_t dilation,
                           const std::vector<double>& weights_per_tap) {
  KernelSpec<double> spec;
  spec.variant = ConvVariant::CD;
  spec.channels = channels;
  spec.taps = taps;
  spec.dilation = dilation;
  spec.gamma = dilation * (taps - 1);
  spec.weights = Tensor64({channels, taps});
  spec.positions = Tensor64({channels, taps});
  for (std::size_t h = 0; h < channels; ++h) {
    for (std::size_t i = 0; i < taps; ++i) {
      spec.weights.at2(h, i) = weights_per_tap[i];
      spec.positions.at2(h, i) = static_cast<double>(dilation * i);
    }
  }
  return spec;
}

KernelSpec<double> random_l_spec(Rng& rng, std::size_t channels, std::size_t taps,
                                 std::size_t gamma, double sigma = 0.5) {
  return make_kernel_spec<double>(ConvVariant::L, channels, taps, 1, 1, 0, gamma, sigma,
                                  PositionInit::Uniform, rng);
}

double sum_mul(const Tensor64& y, const Tensor64& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * mask[i];
  return s;
}

}  // namespace

TEST_CASE("identity kernel materializes to a single leading one") {
  const KernelSpec<double> spec = cd_spec(2, 1, 1, {1.0});
  const Tensor64 k = materialize_kernel(spec);
  CHECK(k.shape() == Shape{2, 1});
  CHECK(k[0] == 1.0);
  CHECK(k[1] == 1.0);
}

TEST_CASE("dilated CD kernel places taps at the grid") {
  const KernelSpec<double> spec = cd_spec(1, 2, 2, {1.0, 1.0});
  const Tensor64 k = materialize_kernel(spec);
  CHECK(k.shape() == Shape{1, 3});
  CHECK(k[0] == 1.0);
  CHECK(k[1] == 0.0);
  CHECK(k[2] == 1.0);
}

TEST_CASE("Gaussian tap between grid cells interpolates symmetrically") {
  KernelSpec<double> spec;
  spec.variant = ConvVariant::L;
  spec.channels = 1;
  spec.taps = 1;
  spec.gamma = 3;
  spec.weights = Tensor64({1, 1}, {1.0});
  spec.positions = Tensor64({1, 1}, {1.5});
  spec.sigmas = Tensor64({1, 1}, {0.5});
  const Tensor64 k = materialize_kernel(spec);
  CHECK(k[1] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(k[2] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(k[0] == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
  CHECK(k[3] == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
}

TEST_CASE("positions outside the delay range are rejected") {
  KernelSpec<double> spec = cd_spec(1, 2, 2, {1.0, 1.0});
  spec.positions.at2(0, 1) = 5.0;  // gamma is 2
  CHECK_THROWS_AS(materialize_kernel(spec), ShapeError);
}

TEST_CASE("identity kernel convolution passes input through") {
  Rng rng(3);
  const KernelSpec<double> spec = cd_spec(4, 1, 1, {1.0});
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {2, 9, 4});
  CHECK(max_abs_diff(conv_forward(spec, u), u) == 0.0);
}

TEST_CASE("two-tap convolution matches the hand-computed sequence") {
  const KernelSpec<double> spec = cd_spec(1, 2, 2, {1.0, 1.0});
  const Tensor64 u({1, 4, 1}, {1, 2, 3, 4});
  const Tensor64 y = conv_forward(spec, u);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
  CHECK(y[2] == 4.0);
  CHECK(y[3] == 6.0);
}

TEST_CASE("output never depends on future input") {
  Rng rng(17);
  const KernelSpec<double> spec = random_l_spec(rng, 3, 2, 4);
  Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 12, 3});
  const Tensor64 y = conv_forward(spec, u);
  const std::size_t t0 = 7;
  u.at3(0, t0, 1) += 10.0;
  const Tensor64 y2 = conv_forward(spec, u);
  for (std::size_t t = 0; t < t0; ++t) {
    for (std::size_t h = 0; h < 3; ++h) CHECK(y.at3(0, t, h) == y2.at3(0, t, h));
  }
}

TEST_CASE("channels never mix") {
  Rng rng(19);
  const KernelSpec<double> spec = random_l_spec(rng, 3, 2, 3);
  Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 8, 3});
  const Tensor64 y = conv_forward(spec, u);
  for (std::size_t t = 0; t < 8; ++t) u.at3(0, t, 0) += 1.0;
  const Tensor64 y2 = conv_forward(spec, u);
  for (std::size_t t = 0; t < 8; ++t) {
    CHECK(y.at3(0, t, 1) == y2.at3(0, t, 1));
    CHECK(y.at3(0, t, 2) == y2.at3(0, t, 2));
  }
}

TEST_CASE("impulse input copies the upstream gradient into tap weights") {
  const KernelSpec<double> spec = cd_spec(1, 2, 2, {0.5, -0.25});
  Tensor64 u({1, 6, 1});
  u.at3(0, 0, 0) = 1.0;
  Tensor64 gy({1, 6, 1}, {10, 20, 30, 40, 50, 60});
  const ConvGrads<double> g = conv_backward(spec, u, gy, false);
  CHECK(g.weights.at2(0, 0) == 10.0);  // tap at delay 0 reads gy[0]
  CHECK(g.weights.at2(0, 1) == 30.0);  // tap at delay 2 reads gy[2]
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(23);
  const KernelSpec<double> spec = random_l_spec(rng, 2, 3, 5);
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {2, 7, 2});
  const ConvGrads<double> g = conv_backward(spec, u, Tensor64({2, 7, 2}), true, true);
  for (std::size_t i = 0; i < g.weights.numel(); ++i) CHECK(g.weights[i] == 0.0);
  for (std::size_t i = 0; i < g.positions.numel(); ++i) CHECK(g.positions[i] == 0.0);
  for (std::size_t i = 0; i < g.input.numel(); ++i) CHECK(g.input[i] == 0.0);
}

TEST_CASE("position gradients exist only for learnable variants") {
  Rng rng(29);
  const KernelSpec<double> spec = cd_spec(1, 2, 1, {1.0, 1.0});
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 5, 1});
  CHECK_THROWS_AS(conv_backward(spec, u, u, /*want_position_grads=*/true), UsageError);
}

TEST_CASE("conv gradients match finite differences across variants") {
  Rng rng(31);
  Tensor64 mask;
  auto loss = [&](const KernelSpec<double>& spec, const Tensor64& u) {
    return sum_mul(conv_forward(spec, u), mask);
  };
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.split(trial);
    const bool learnable = trial % 2 == 0;
    KernelSpec<double> spec =
        learnable ? random_l_spec(r, 2, 2, 3)
                  : make_kernel_spec<double>(trial % 4 == 1 ? ConvVariant::CD : ConvVariant::EID, 2,
                                             2, 2, 1, 1, 0, 0.5, PositionInit::Dilated, r);
    const Tensor64 u = r.uniform_tensor<double>(-1.0, 1.0, {2, 9, 2});
    mask = r.uniform_tensor<double>(-1.0, 1.0, {2, 9, 2});
    const ConvGrads<double> g = conv_backward(spec, u, mask, learnable, learnable);

    CHECK(max_rel_error(g.input, finite_diff_grad([&](const Tensor64& v) {
            return loss(spec, v);
          }, u)) < 1e-4);
    CHECK(max_rel_error(g.weights, finite_diff_grad([&](const Tensor64& v) {
            KernelSpec<double> s = spec;
            s.weights = v;
            return loss(s, u);
          }, spec.weights)) < 1e-4);
    if (learnable) {
      CHECK(max_rel_error(g.positions, finite_diff_grad([&](const Tensor64& v) {
              KernelSpec<double> s = spec;
              s.positions = v;
              return loss(s, u);
            }, spec.positions)) < 1e-4);
      CHECK(max_rel_error(g.sigmas, finite_diff_grad([&](const Tensor64& v) {
              KernelSpec<double> s = spec;
              s.sigmas = v;
              return loss(s, u);
            }, spec.sigmas)) < 1e-4);
    }
  }
}

TEST_CASE("position gradient vanishes on an interior grid point under constant drive") {
  KernelSpec<double> spec;
  spec.variant = ConvVariant::L;
  spec.channels = 1;
  spec.taps = 1;
  spec.gamma = 4;
  spec.weights = Tensor64({1, 1}, {1.0});
  spec.positions = Tensor64({1, 1}, {2.0});
  spec.sigmas = Tensor64({1, 1}, {0.5});
  const Tensor64 u = Tensor64::full({1, 16, 1}, 1.0);
  Tensor64 gy({1, 16, 1});
  gy.at3(0, 10, 0) = 1.0;  // deep enough that padding cannot break symmetry
  const ConvGrads<double> g = conv_backward(spec, u, gy, true);
  CHECK(std::abs(g.positions[0]) < 1e-14);
}

TEST_CASE("streaming equals the dense path over a full sequence") {
  Rng rng(37);
  const KernelSpec<double> spec = random_l_spec(rng, 3, 2, 5);
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 64, 3});
  const Tensor64 dense = conv_forward(spec, u);
  ConvRingBuffer<double> buf(3, spec.gamma);
  const Tensor64 kernel = materialize_kernel(spec);
  for (std::size_t t = 0; t < 64; ++t) {
    Tensor64 u_t({3});
    for (std::size_t h = 0; h < 3; ++h) u_t[h] = u.at3(0, t, h);
    const Tensor64 y_t = stream_step(buf, spec, u_t, kernel);
    for (std::size_t h = 0; h < 3; ++h) {
      CHECK(std::abs(y_t[h] - dense.at3(0, t, h)) < 1e-6);
    }
  }
}

TEST_CASE("streaming/dense equivalence holds across random specs") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    Rng r = rng.split(trial);
    const std::size_t channels = 1 + r.uniform_index(4);
    const std::size_t taps = 1 + r.uniform_index(3);
    KernelSpec<double> spec;
    switch (trial % 3) {
      case 0:
        spec = make_kernel_spec<double>(ConvVariant::CD, channels, taps, 1 + r.uniform_index(3), 1,
                                        0, 0, 0.5, PositionInit::Dilated, r);
        break;
      case 1:
        spec = make_kernel_spec<double>(ConvVariant::EID, channels, taps, 1, 1 + r.uniform_index(2),
                                        r.uniform_index(3), 0, 0.5, PositionInit::Dilated, r);
        break;
      default:
        spec = random_l_spec(r, channels, taps, 1 + r.uniform_index(6));
        break;
    }
    const std::size_t tlen = 1 + r.uniform_index(40);
    const Tensor64 u = r.uniform_tensor<double>(-1.0, 1.0, {1, tlen, channels});
    const Tensor64 dense = conv_forward(spec, u);
    ConvRingBuffer<double> buf(channels, spec.gamma);
    const Tensor64 kernel = materialize_kernel(spec);
    for (std::size_t t = 0; t < tlen; ++t) {
      Tensor64 u_t({channels});
      for (std::size_t h = 0; h < channels; ++h) u_t[h] = u.at3(0, t, h);
      const Tensor64 y_t = stream_step(buf, spec, u_t, kernel);
      for (std::size_t h = 0; h < channels; ++h) {
        CHECK(std::abs(y_t[h] - dense.at3(0, t, h)) < 1e-6);
      }
    }
  }
}

TEST_CASE("zero-delay kernel streams as pointwise scaling without a buffer") {
  KernelSpec<double> spec = cd_spec(2, 1, 1, {2.0});
  ConvRingBuffer<double> buf(2, 0);
  CHECK(buf.capacity() == 0);
  const Tensor64 y = stream_step(buf, spec, Tensor64({2}, {1.0, -3.0}));
  CHECK(y[0] == 2.0);
  CHECK(y[1] == -6.0);
}

TEST_CASE("first steps follow zero-padding semantics") {
  const KernelSpec<double> spec = cd_spec(1, 2, 2, {1.0, 1.0});
  ConvRingBuffer<double> buf(1, 2);
  CHECK(stream_step(buf, spec, Tensor64({1}, {5.0}))[0] == 5.0);
  CHECK(stream_step(buf, spec, Tensor64({1}, {7.0}))[0] == 7.0);
  CHECK(stream_step(buf, spec, Tensor64({1}, {1.0}))[0] == 6.0);  // 1 + 5
}

TEST_CASE("buffer capacity mismatch is rejected") {
  const KernelSpec<double> spec = cd_spec(1, 2, 2, {1.0, 1.0});
  ConvRingBuffer<double> buf(1, 1);
  CHECK_THROWS_AS(stream_step(buf, spec, Tensor64({1}, {0.0})), ShapeError);
}

TEST_CASE("frozen integer positions in the delta limit reproduce the CD kernel") {
  Rng rng(43);
  const std::size_t channels = 3, taps = 3, dilation = 2;
  KernelSpec<double> cd =
      make_kernel_spec<double>(ConvVariant::CD, channels, taps, dilation, 1, 0, 0, 0.5,
                               PositionInit::Dilated, rng);
  KernelSpec<double> learnable = cd;
  learnable.variant = ConvVariant::L;
  learnable.sigmas = Tensor64::full({channels, taps}, 1e-3);  // delta-tap stand-in
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {2, 12, channels});
  CHECK(max_abs_diff(conv_forward(cd, u), conv_forward(learnable, u)) == 0.0);
}

TEST_CASE("receptive field sums the layer delays") {
  Rng rng(47);
  KernelSpec<double> unit = cd_spec(1, 1, 1, {1.0});
  CHECK(receptive_field(std::vector<KernelSpec<double>>{unit}) == 1);

  // Exponentially increasing dilation: 6 layers, 64 taps, base rate 1.
  std::vector<KernelSpec<double>> eid;
  for (std::size_t l = 0; l < 6; ++l) {
    eid.push_back(make_kernel_spec<double>(ConvVariant::EID, 1, 64, 1, 1, l, 0, 0.5,
                                           PositionInit::Dilated, rng));
  }
  CHECK(receptive_field(eid) == 3970);

  // Constant dilation: 6 layers, 8 taps, rate 32.
  std::vector<KernelSpec<double>> cd;
  for (std::size_t l = 0; l < 6; ++l) {
    cd.push_back(make_kernel_spec<double>(ConvVariant::CD, 1, 8, 32, 1, l, 0, 0.5,
                                          PositionInit::Dilated, rng));
  }
  CHECK(receptive_field(cd) == 1345);
}

TEST_CASE("receptive field composes like stacked impulse responses") {
  // Convolving the layer kernels together must span exactly R timesteps.
  Rng rng(53);
  std::vector<KernelSpec<double>> stack;
  for (std::size_t l = 0; l < 3; ++l) {
    stack.push_back(make_kernel_spec<double>(ConvVariant::EID, 1, 3, 1, 1, l, 0, 0.5,
                                             PositionInit::Dilated, rng));
  }
  const std::size_t r = receptive_field(stack);
  std::vector<double> impulse{1.0};
  for (const auto& spec : stack) {
    const Tensor64 k = materialize_kernel(spec);
    std::vector<double> next(impulse.size() + spec.gamma, 0.0);
    for (std::size_t i = 0; i < impulse.size(); ++i) {
      for (std::size_t n = 0; n <= spec.gamma; ++n) next[i + n] += impulse[i] * k[n];
    }
    impulse = std::move(next);
  }
  CHECK(impulse.size() == r);
}

TEST_CASE("clamping projects positions into the delay range") {
  Rng rng(59);
  KernelSpec<double> spec = random_l_spec(rng, 1, 3, 4);
  spec.positions.at2(0, 0) = -0.3;
  spec.positions.at2(0, 1) = 5.0;
  const double keep = spec.positions.at2(0, 2);
  clamp_positions(spec);
  CHECK(spec.positions.at2(0, 0) == 0.0);
  CHECK(spec.positions.at2(0, 1) == 4.0);
  CHECK(spec.positions.at2(0, 2) == keep);
}

TEST_CASE("effective buffer length follows the trained positions, capped at gamma") {
  Rng rng(61);
  KernelSpec<double> spec = random_l_spec(rng, 1, 2, 16);
  spec.positions.at2(0, 0) = 3.0;
  spec.positions.at2(0, 1) = 7.2;
  CHECK(effective_gamma(spec) == 9);  // ceil(7.2 + 1.5)
  spec.positions.at2(0, 1) = 15.9;
  CHECK(effective_gamma(spec) == 16);  // capped
  spec.positions.fill(0.0);
  spec.gamma = 0;
  CHECK(effective_gamma(spec) == 0);
}
