#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/gradcheck.hpp"
#include "mgrade/model.hpp"
#include "mgrade/training.hpp"

namespace mgrade {

struct GradAuditRow {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradAuditReport {
  std::vector<GradAuditRow> rows;
  double worst = 0.0;
  double threshold = 1e-4;

  bool pass() const { return worst < threshold; }

  nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const GradAuditRow& r : rows) {
      rows_json.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}});
    }
    return {{"rows", rows_json}, {"worst", worst}, {"threshold", threshold}, {"pass", pass()}};
  }
};

/// Reference model for the audit: two full variant-L layers, eight steps.
inline NetworkConfig grad_audit_config() {
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

/// Audits every hand-written backward pass against central finite
/// differences at f64: the end-to-end loss gradient of the reference model
/// (covering encoder, conv weights and positions, gates, MLP, norm and
/// decoder) plus isolated per-operation checks.
inline GradAuditReport run_grad_audit(std::uint64_t seed = 0) {
  GradAuditReport report;
  auto record = [&](const std::string& name, double err) {
    report.rows.push_back({name, err});
    report.worst = std::max(report.worst, err);
  };

  {  // End-to-end loss through the full network.
    const NetworkConfig config = grad_audit_config();
    NetworkParams<double> params = init_network<double>(config, seed);
    Rng rng(seed, 7);
    const Tensor64 inputs = rng.uniform_tensor<double>(-1.0, 1.0, {2, 8, 1});
    const Tensor64 targets = rng.uniform_tensor<double>(-1.0, 1.0, {2, 8, 2});

    const NetworkForward<double> fw = network_forward(params, inputs);
    const LossResult<double> loss = mse_loss(fw.output, targets);
    NetworkGrads<double> grads = network_backward(params, inputs, fw, loss.grad);

    visit_params(params, [&](const char* name, ParamGroup, Tensor64& tensor) {
      const Tensor64 saved = tensor;
      const Tensor64 fd = finite_diff_grad(
          [&](const Tensor64& v) {
            tensor = v;
            const double value =
                mse_loss(network_forward(params, inputs, false).output, targets).value;
            tensor = saved;
            return value;
          },
          saved);
      visit_grads(params, grads, [&](const char* gname, Tensor64& gt) {
        if (std::string(gname) == name) record(std::string("net.") + name, max_rel_error(gt, fd));
      });
    });
  }

  {  // Isolated per-operation audits on fresh random instances.
    Rng rng(seed, 11);
    const Tensor64 mask = rng.uniform_tensor<double>(-1.0, 1.0, {3, 4});
    auto masked = [&](const Tensor64& y, const Tensor64& m) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * m[i];
      return s;
    };

    {
      LinearParams<double> p = make_linear<double>(4, 3, true, rng);
      const Tensor64 x = rng.uniform_tensor<double>(-1.0, 1.0, {3, 3});
      const LinearGrads<double> g = linear_backward(p, x, mask);
      record("op.linear.w", max_rel_error(g.w, finite_diff_grad([&](const Tensor64& v) {
               LinearParams<double> q = p;
               q.w = v;
               return masked(linear_forward(q, x), mask);
             }, p.w)));
    }
    {
      MlpParams<double> p = make_mlp<double>(4, rng);
      const Tensor64 x = rng.uniform_tensor<double>(-1.0, 1.0, {3, 4});
      MlpCache<double> cache;
      (void)mlp_forward(p, x, &cache);
      const MlpGrads<double> g = mlp_backward(p, x, cache, mask);
      record("op.mlp.w1", max_rel_error(g.w1, finite_diff_grad([&](const Tensor64& v) {
               MlpParams<double> q = p;
               q.w1 = v;
               return masked(mlp_forward(q, x), mask);
             }, p.w1)));
    }
    {
      NormParams<double> p = make_norm<double>(4);
      p.gain = rng.uniform_tensor<double>(0.5, 1.5, {4});
      const Tensor64 x = rng.uniform_tensor<double>(-1.0, 1.0, {3, 4});
      NormCache<double> cache;
      (void)layernorm_forward(p, x, 1e-5, &cache);
      const NormGrads<double> g = layernorm_backward(p, cache, mask);
      record("op.layernorm.x", max_rel_error(g.x, finite_diff_grad([&](const Tensor64& v) {
               return masked(layernorm_forward(p, v, 1e-5), mask);
             }, x)));
    }
    {
      GruParams<double> p = make_gru<double>(4, rng);
      const Tensor64 x = rng.uniform_tensor<double>(-1.0, 1.0, {1, 3, 4});
      const Tensor64 h0 = rng.uniform_tensor<double>(-1.0, 1.0, {1, 4});
      const Tensor64 gmask = rng.uniform_tensor<double>(-1.0, 1.0, {1, 3, 4});
      GruCache<double> cache;
      (void)gru_forward(p, x, h0, &cache);
      const GruGrads<double> g = gru_backward(p, x, h0, cache, gmask);
      record("op.gru.wz", max_rel_error(g.gate.w, finite_diff_grad([&](const Tensor64& v) {
               GruParams<double> q = p;
               q.gate.w = v;
               return masked(gru_sequential(q, x, h0), gmask);
             }, p.gate.w)));
    }
    {
      KernelSpec<double> spec = make_kernel_spec<double>(ConvVariant::L, 2, 2, 1, 1, 0, 4, 0.5,
                                                         PositionInit::Uniform, rng);
      const Tensor64 u = rng.uniform_tensor<double>(-1.0, 1.0, {1, 9, 2});
      const Tensor64 cmask = rng.uniform_tensor<double>(-1.0, 1.0, {1, 9, 2});
      const ConvGrads<double> g = conv_backward(spec, u, cmask, true, true);
      record("op.conv.positions",
             max_rel_error(g.positions, finite_diff_grad([&](const Tensor64& v) {
               KernelSpec<double> s = spec;
               s.positions = v;
               return masked(conv_forward(s, u), cmask);
             }, spec.positions)));
    }
  }
  return report;
}

}  // namespace mgrade
