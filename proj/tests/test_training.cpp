#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgrade/gradcheck.hpp"
#include "mgrade/training.hpp"

using namespace mgrade;

TEST_CASE("perfect predictions score a MASE of zero") {
  Rng rng(1);
  const Tensor64 y = rng.uniform_tensor<double>(-1.0, 1.0, {2, 10, 1});
  const auto denom = mase_denominator(y);
  CHECK(mase_loss(y, y, denom).value == 0.0);
}

TEST_CASE("the naive persistence forecast scores exactly one") {
  Rng rng(2);
  const Tensor64 y = rng.uniform_tensor<double>(-1.0, 1.0, {1, 64, 2});
  // Persistence predicts y_{t-1}; align by scoring on t >= 1 only.
  const Tensor64 target = slice(y, 1, 1, 64);
  const Tensor64 pred = slice(y, 1, 0, 63);
  const auto denom = mase_denominator(target);
  // Denominators differ between |y_t - y_{t-1}| over the scored range and the
  // prediction error; make them identical by scoring the same differences.
  const LossResult<double> r = mase_loss(pred, target, denom);
  CHECK(r.value == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("constant target series are rejected") {
  const Tensor64 flat = Tensor64::full({1, 8, 1}, 3.0);
  CHECK_THROWS_AS(mase_denominator(flat), NumericError);
}

TEST_CASE("cross entropy of uniform logits is log of the class count") {
  const Tensor64 logits({4, 10});
  const std::vector<std::int32_t> labels{0, 3, 7, 9};
  const LossResult<double> r = cross_entropy_loss(logits, labels);
  CHECK(r.value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(3);
  const Tensor64 out = rng.uniform_tensor<double>(-1.0, 1.0, {2, 5, 3});
  const Tensor64 tgt = rng.uniform_tensor<double>(-1.0, 1.0, {2, 5, 3});

  const LossResult<double> mse = mse_loss(out, tgt);
  CHECK(max_rel_error(mse.grad, finite_diff_grad([&](const Tensor64& v) {
          return mse_loss(v, tgt).value;
        }, out)) < 1e-4);

  const auto denom = mase_denominator(tgt);
  const LossResult<double> mase = mase_loss(out, tgt, denom);
  CHECK(max_rel_error(mase.grad, finite_diff_grad([&](const Tensor64& v) {
          return mase_loss(v, tgt, denom).value;
        }, out)) < 1e-4);

  const Tensor64 logits = rng.uniform_tensor<double>(-1.0, 1.0, {4, 5});
  const std::vector<std::int32_t> labels{1, 0, 4, 2};
  const LossResult<double> ce = cross_entropy_loss(logits, labels);
  CHECK(max_rel_error(ce.grad, finite_diff_grad([&](const Tensor64& v) {
          return cross_entropy_loss(v, labels).value;
        }, logits)) < 1e-4);
}

namespace {

NetworkConfig unit_config() {
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 2;
  c.input = 1;
  c.output = 1;
  c.conv = ConvMode::L;
  c.taps = 2;
  c.max_delay = 2;
  return c;
}

NetworkGrads<double> zero_grads_like(const NetworkParams<double>& p) {
  NetworkGrads<double> g;
  g.layers.resize(p.layers.size());
  visit_grads(const_cast<NetworkParams<double>&>(p), g, [&](const char* name, Tensor64& t) {
    visit_params(p, [&](const char* pname, ParamGroup, const Tensor64& pt) {
      if (std::string(name) == pname) t = Tensor64(pt.shape());
    });
  });
  return g;
}

}  // namespace

TEST_CASE("zero gradients and zero decay leave parameters untouched") {
  NetworkParams<double> p = init_network<double>(unit_config(), 7);
  const NetworkParams<double> before = p;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  GroupedAdam<double> opt(cfg);
  NetworkGrads<double> g = zero_grads_like(p);
  opt.step(p, g, 0.01);
  visit_params(p, [&](const char* name, ParamGroup, const Tensor64& t) {
    visit_params(before, [&](const char* name2, ParamGroup, const Tensor64& t2) {
      if (std::string(name) == name2) CHECK(max_abs_diff(t, t2) == 0.0);
    });
  });
}

TEST_CASE("first Adam step on a unit gradient moves by about lr") {
  NetworkParams<double> p = init_network<double>(unit_config(), 8);
  const double before = p.encoder.b[0];
  AdamConfig cfg;
  GroupedAdam<double> opt(cfg);
  NetworkGrads<double> g = zero_grads_like(p);
  g.enc_b[0] = 1.0;  // bias group: plain Adam, no decay
  opt.step(p, g, 0.01);
  CHECK(p.encoder.b[0] == doctest::Approx(before - 0.01).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay shrinks only the weights group") {
  NetworkParams<double> p = init_network<double>(unit_config(), 9);
  const NetworkParams<double> before = p;
  AdamConfig cfg;  // decay 0.01 on weights
  GroupedAdam<double> opt(cfg);
  NetworkGrads<double> g = zero_grads_like(p);
  const double lr = 0.1;
  opt.step(p, g, lr);
  visit_params(p, [&](const char* name, ParamGroup group, const Tensor64& t) {
    visit_params(before, [&](const char* name2, ParamGroup, const Tensor64& t2) {
      if (std::string(name) != name2) return;
      if (group == ParamGroup::Weights) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
          CHECK(t[i] == doctest::Approx(t2[i] * (1.0 - lr * cfg.weight_decay)).epsilon(1e-12));
        }
      } else {
        CHECK(max_abs_diff(t, t2) == 0.0);  // bias and positions are never decayed
      }
    });
  });
}

TEST_CASE("positions pushed past the delay bound are clamped back") {
  NetworkParams<double> p = init_network<double>(unit_config(), 10);
  auto& spec = *p.layers[0].conv;
  spec.positions.at2(0, 0) = 2.0;  // at gamma
  AdamConfig cfg;
  GroupedAdam<double> opt(cfg);
  NetworkGrads<double> g = zero_grads_like(p);
  g.layers[0].conv_p.at2(0, 0) = -5.0;  // descent pushes the position outward
  opt.step(p, g, 0.5);
  CHECK(spec.positions.at2(0, 0) == 2.0);
}

TEST_CASE("non-finite gradients abort naming the parameter") {
  NetworkParams<double> p = init_network<double>(unit_config(), 11);
  GroupedAdam<double> opt(AdamConfig{});
  NetworkGrads<double> g = zero_grads_like(p);
  g.enc_w[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(p, g, 0.01), doctest::Contains("encoder.w"), NumericError);
}

TEST_CASE("schedule: zero at start, base at the warmup boundary, zero at the end") {
  Schedule s{0.004, 100, 0.5};
  CHECK(s.lr_at(0) == 0.0);
  CHECK(s.lr_at(50) == doctest::Approx(0.004).epsilon(1e-12));
  CHECK(s.lr_at(100) == doctest::Approx(0.0).epsilon(1e-15));
  for (std::size_t e = 1; e <= 50; ++e) CHECK(s.lr_at(e) > s.lr_at(e - 1) - 1e-15);
  for (std::size_t e = 51; e <= 100; ++e) CHECK(s.lr_at(e) < s.lr_at(e - 1) + 1e-15);
}

namespace {

// Tiny learnable synthetic set: predict the input scaled by 2 at every step.
SequenceBatch<double> scaled_copy_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SequenceBatch<double> b;
  b.task = "copy";
  b.inputs = rng.uniform_tensor<double>(-1.0, 1.0, {n, 8, 1});
  b.targets = scale(b.inputs, 2.0);
  return b;
}

}  // namespace

TEST_CASE("two-epoch smoke run reduces the training loss") {
  NetworkConfig c = unit_config();
  c.hidden = 4;
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.base_lr = 0.02;
  opt.warmup_frac = 0.0;
  opt.seed = 3;
  const SequenceBatch<double> data = scaled_copy_batch(64, 5);
  const TrainResult<double> r = train(c, opt, data, data);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("identical seeds produce bit-identical metric logs") {
  NetworkConfig c = unit_config();
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 4;
  opt.seed = 12;
  const SequenceBatch<double> data = scaled_copy_batch(16, 6);
  const TrainResult<double> a = train(c, opt, data, data);
  const TrainResult<double> b = train(c, opt, data, data);
  CHECK(metrics_csv(a.history) == metrics_csv(b.history));
}

TEST_CASE("early stopping halts once the metric target is reached") {
  NetworkConfig c = unit_config();
  TrainOptions opt;
  opt.epochs = 50;
  opt.batch_size = 8;
  opt.seed = 4;
  opt.metric_target = -1e9;  // any metric (negative val loss) passes at once
  const SequenceBatch<double> data = scaled_copy_batch(16, 7);
  const TrainResult<double> r = train(c, opt, data, data);
  CHECK(r.epochs_run == 1);
}

TEST_CASE("full-network training gradient matches finite differences") {
  // One step of the composite loss through the entire network at f64.
  NetworkConfig c = unit_config();
  c.hidden = 3;
  NetworkParams<double> p = init_network<double>(c, 20);
  const SequenceBatch<double> data = scaled_copy_batch(2, 21);

  const NetworkForward<double> fw = network_forward(p, data.inputs);
  const LossResult<double> loss = mse_loss(fw.output, data.targets);
  NetworkGrads<double> g = network_backward(p, data.inputs, fw, loss.grad);

  double worst = 0.0;
  visit_params(p, [&](const char* name, ParamGroup, Tensor64& t) {
    const Tensor64 saved = t;
    const Tensor64 fd = finite_diff_grad(
        [&](const Tensor64& v) {
          t = v;
          const double value =
              mse_loss(network_forward(p, data.inputs, false).output, data.targets).value;
          t = saved;
          return value;
        },
        saved);
    visit_grads(p, g, [&](const char* gname, Tensor64& gt) {
      if (std::string(gname) == name) worst = std::max(worst, max_rel_error(gt, fd));
    });
  });
  CHECK(worst < 1e-4);
}
