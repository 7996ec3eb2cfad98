#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "mgrade/gradcheck.hpp"
#include "mgrade/model.hpp"

using namespace mgrade;

namespace {

NetworkConfig tiny_l_config() {
  NetworkConfig c;
  c.layers = 2;
  c.hidden = 4;
  c.input = 1;
  c.output = 2;
  c.conv = ConvMode::L;
  c.taps = 2;
  c.max_delay = 3;
  c.head = Head::RegressPerStep;
  return c;
}

double masked(const Tensor64& y, const Tensor64& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * mask[i];
  return s;
}

}  // namespace

TEST_CASE("layer with identity conv, open gate, identity candidate and zero mlp") {
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 3;
  c.input = 3;
  c.output = 3;
  c.conv = ConvMode::CD;
  c.taps = 1;
  Rng rng(0);
  NetworkParams<double> p = init_network<double>(c, 0);
  auto& layer = p.layers[0];
  layer.conv->weights.fill(1.0);
  layer.gru->gate.w.fill(0.0);
  layer.gru->gate.b.fill(100.0);   // z == 1
  layer.gru->candidate.w = Tensor64::identity(3);
  layer.gru->candidate.b.fill(0.0);
  layer.mlp->w1.fill(0.0);
  layer.mlp->b1.fill(0.0);
  layer.mlp->w2.fill(0.0);
  layer.mlp->b2.fill(0.0);

  const Tensor64 x = rng.uniform_tensor<double>(-1.0, 1.0, {2, 5, 3});
  LayerForward<double> f;
  const Tensor64 y = layer_forward(c, layer, x, &f);

  const Tensor64 want = layernorm_forward(*layer.norm, scale(x, 2.0), 1e-5);
  CHECK(max_abs_diff(y, want) < 1e-9);
  // Exported hidden state is the recurrent output before the skip.
  CHECK(max_abs_diff(f.gru.h, x) < 1e-9);
}

TEST_CASE("zero input with zero biases keeps pre-norm activations at zero") {
  NetworkConfig c = tiny_l_config();
  c.use_norm = false;
  NetworkParams<double> p = init_network<double>(c, 3);
  visit_params(p, [](const char*, ParamGroup g, Tensor<double>& t) {
    if (g == ParamGroup::Bias) t.fill(0.0);
  });
  const Tensor64 u({1, 4, 1});
  const NetworkForward<double> fw = network_forward(p, u);
  for (std::size_t i = 0; i < fw.output.numel(); ++i) CHECK(fw.output[i] == 0.0);
}

TEST_CASE("degenerate configs are rejected") {
  NetworkConfig c = tiny_l_config();
  c.layers = 0;
  CHECK_THROWS_AS(validate_config(c), UsageError);
  c = tiny_l_config();
  c.hidden = 0;
  CHECK_THROWS_AS(validate_config(c), UsageError);
  c = tiny_l_config();
  c.taps = 0;
  CHECK_THROWS_AS(init_network<double>(c, 0), UsageError);
}

TEST_CASE("permuting the batch permutes outputs identically") {
  NetworkConfig c = tiny_l_config();
  NetworkParams<double> p = init_network<double>(c, 7);
  Rng rng(9);
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {3, 6, 1});
  Tensor64 swapped(u.shape());
  const std::size_t row = 6 * 1;
  // swap batch entries 0 and 2
  for (std::size_t t = 0; t < row; ++t) {
    swapped[0 * row + t] = u[2 * row + t];
    swapped[1 * row + t] = u[1 * row + t];
    swapped[2 * row + t] = u[0 * row + t];
  }
  const Tensor64 y = network_forward(p, u).output;
  const Tensor64 y2 = network_forward(p, swapped).output;
  const std::size_t orow = 6 * 2;
  for (std::size_t t = 0; t < orow; ++t) {
    CHECK(y[0 * orow + t] == y2[2 * orow + t]);
    CHECK(y[1 * orow + t] == y2[1 * orow + t]);
    CHECK(y[2 * orow + t] == y2[0 * orow + t]);
  }
}

TEST_CASE("end-to-end causality") {
  NetworkConfig c = tiny_l_config();
  NetworkParams<double> p = init_network<double>(c, 21);
  Rng rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    Rng r = rng.split(trial);
    Tensor64 u = r.uniform_tensor<double>(-1.0, 1.0, {1, 8, 1});
    const Tensor64 y = network_forward(p, u).output;
    const std::size_t t0 = 3 + r.uniform_index(5);
    u.at3(0, t0, 0) += 1.0;
    const Tensor64 y2 = network_forward(p, u).output;
    for (std::size_t t = 0; t < t0; ++t) {
      for (std::size_t o = 0; o < 2; ++o) CHECK(y.at3(0, t, o) == y2.at3(0, t, o));
    }
  }
}

TEST_CASE("end-to-end gradients match finite differences") {
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 4;
  c.input = 1;
  c.output = 2;
  c.conv = ConvMode::L;
  c.taps = 2;
  c.max_delay = 2;
  NetworkParams<double> p = init_network<double>(c, 5);
  Rng rng(6);
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 6, 1});
  const Tensor64 mask = rng.uniform_tensor<double>(-1.0, 1.0, {1, 6, 2});

  const NetworkForward<double> fw = network_forward(p, u);
  NetworkGrads<double> g = network_backward(p, u, fw, mask);

  double worst = 0.0;
  visit_params(p, [&](const char* name, ParamGroup, Tensor<double>& t) {
    const Tensor64 saved = t;
    const Tensor64 fd = finite_diff_grad(
        [&](const Tensor64& v) {
          t = v;
          const double loss = masked(network_forward(p, u, false).output, mask);
          t = saved;
          return loss;
        },
        saved);
    Tensor64* analytic = nullptr;
    visit_grads(p, g, [&](const char* gname, Tensor<double>& gt) {
      if (std::string(gname) == name) analytic = &gt;
    });
    REQUIRE(analytic != nullptr);
    worst = std::max(worst, max_rel_error(*analytic, fd));
  });
  CHECK(worst < 1e-4);
}

TEST_CASE("count_params matches the sCIFAR CD reference configuration") {
  NetworkConfig c;
  c.layers = 6;
  c.hidden = 32;
  c.input = 1;
  c.output = 10;
  c.conv = ConvMode::CD;
  c.taps = 8;
  c.dilation = 32;
  c.head = Head::ClassifyLast;
  const ParamBreakdown b = count_params(c);
  CHECK(b.conv == 256);
  CHECK(b.recurrent == 2112);
  CHECK(b.mlp == 4192);
  CHECK(b.norm == 64);
  CHECK(b.total == 40096);
  CHECK(std::abs(static_cast<double>(b.total) - 41000.0) / 41000.0 < 0.03);
}

TEST_CASE("count_params matches the hand-evaluated unit configuration") {
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 1;
  c.input = 1;
  c.output = 1;
  c.conv = ConvMode::CD;
  c.taps = 1;
  const ParamBreakdown b = count_params(c);
  CHECK(b.encoder == 1);
  CHECK(b.conv == 1);
  CHECK(b.recurrent == 4);
  CHECK(b.mlp == 7);
  CHECK(b.norm == 2);
  CHECK(b.decoder == 1);
  CHECK(b.total == 16);
}

TEST_CASE("variant L charges weights, positions and widths per tap") {
  NetworkConfig cd;
  cd.layers = 2;
  cd.hidden = 8;
  cd.input = 1;
  cd.output = 4;
  cd.conv = ConvMode::CD;
  cd.taps = 5;
  NetworkConfig l = cd;
  l.conv = ConvMode::L;
  l.max_delay = 16;
  const ParamBreakdown bcd = count_params(cd);
  const ParamBreakdown bl = count_params(l);
  CHECK(bl.conv == 3 * bcd.conv);
  CHECK(bl.total - bl.conv * l.layers == bcd.total - bcd.conv * cd.layers);
}

TEST_CASE("closed-form counts equal the stored parameter floats") {
  const NetworkConfig configs[] = {
      [] {
        NetworkConfig c;
        c.layers = 2;
        c.hidden = 6;
        c.input = 3;
        c.output = 4;
        c.conv = ConvMode::EID;
        c.taps = 3;
        return c;
      }(),
      [] {
        NetworkConfig c = tiny_l_config();
        return c;
      }(),
      [] {
        NetworkConfig c;
        c.layers = 3;
        c.hidden = 5;
        c.input = 2;
        c.output = 2;
        c.conv = ConvMode::None;
        c.use_mlp = false;
        return c;
      }(),
  };
  for (const NetworkConfig& c : configs) {
    NetworkParams<double> p = init_network<double>(c, 11);
    const ParamBreakdown b = count_params(c);
    CHECK(enumerate_stored_params(p) == b.stored_total);
    CHECK(b.stored_total == b.total + b.runtime_extra);
    CHECK(b.runtime_extra == c.hidden);  // runtime encoder bias sits outside the composition
  }
}

TEST_CASE("identity-kernel streaming state is exactly layers x hidden floats") {
  NetworkConfig c;
  c.layers = 3;
  c.hidden = 7;
  c.input = 1;
  c.output = 2;
  c.conv = ConvMode::CD;
  c.taps = 1;  // identity tap, no buffered history
  NetworkParams<double> p = init_network<double>(c, 2);
  StreamingState<double> state(p);
  CHECK(state.state_float_count() == 3 * 7);
}

TEST_CASE("streaming inference matches the batch forward pass") {
  NetworkConfig c = tiny_l_config();
  NetworkParams<double> p = init_network<double>(c, 31);
  Rng rng(32);
  const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 20, 1});
  const Tensor64 batch_out = network_forward(p, u).output;
  StreamingState<double> state(p);
  for (std::size_t t = 0; t < 20; ++t) {
    Tensor64 u_t({1}, {u.at3(0, t, 0)});
    const Tensor64 y_t = state.step(u_t);
    for (std::size_t o = 0; o < 2; ++o) {
      CHECK(y_t[o] == doctest::Approx(batch_out.at3(0, t, o)).epsilon(1e-9));
    }
  }
}

TEST_CASE("classify-last head reads the final timestep") {
  NetworkConfig c = tiny_l_config();
  c.head = Head::ClassifyLast;
  c.output = 3;
  NetworkParams<double> p = init_network<double>(c, 41);
  Rng rng(42);
  Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {2, 9, 1});
  const NetworkForward<double> fw = network_forward(p, u);
  CHECK(fw.output.shape() == Shape{2, 3});
  // Perturbing a non-final timestep of a causal network with a 5-step global
  // receptive field leaves earlier features alone but the last step changes;
  // perturbing beyond all receptive windows changes nothing.
  const NetworkForward<double> base = network_forward(p, u);
  u.at3(1, 8, 0) += 0.5;  // final step input
  const NetworkForward<double> moved = network_forward(p, u);
  CHECK(std::abs(base.output.at2(1, 0) - moved.output.at2(1, 0)) > 0.0);
}

TEST_CASE("checkpoint round trip preserves every parameter and the config") {
  NetworkConfig c = tiny_l_config();
  NetworkParams<double> p = init_network<double>(c, 55);
  const std::string path = "mgrade_test_model.ckpt";
  save_archive(path, params_to_archive(p));
  const NetworkParams<double> back = params_from_archive(load_archive<double>(path));
  CHECK(back.config.layers == c.layers);
  CHECK(back.config.conv == ConvMode::L);
  bool all_equal = true;
  visit_params(p, [&](const char* name, ParamGroup, const Tensor<double>& t) {
    visit_params(back, [&](const char* name2, ParamGroup, const Tensor<double>& t2) {
      if (std::string(name) == name2 && max_abs_diff(t, t2) != 0.0) all_equal = false;
    });
  });
  CHECK(all_equal);
  std::remove(path.c_str());
}
