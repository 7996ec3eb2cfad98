#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>

#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/rng.hpp"

namespace mgrade::lorenz {

struct LorenzConfig {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double dt = 0.01;
  std::size_t burn_in = 1000;
  std::size_t length = 256;  // observed steps per trajectory
  std::size_t n_trajectories = 2000;
  double noise = 0.05;  // Gaussian observation noise, fraction of per-dim std
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double val_frac = 0.1;
  std::optional<std::array<double, 3>> init_state;  // fixed start, mainly for tests
};

using State = std::array<double, 3>;

inline State derivative(const LorenzConfig& cfg, const State& s) {
  return {cfg.sigma * (s[1] - s[0]), s[0] * (cfg.rho - s[2]) - s[1],
          s[0] * s[1] - cfg.beta * s[2]};
}

/// One classic fourth-order Runge-Kutta step.
inline State rk4_step(const LorenzConfig& cfg, const State& s) {
  auto axpy = [](const State& a, const State& b, double h) {
    return State{a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]};
  };
  const State k1 = derivative(cfg, s);
  const State k2 = derivative(cfg, axpy(s, k1, cfg.dt / 2));
  const State k3 = derivative(cfg, axpy(s, k2, cfg.dt / 2));
  const State k4 = derivative(cfg, axpy(s, k3, cfg.dt));
  State out;
  for (std::size_t d = 0; d < 3; ++d) {
    out[d] = s[d] + cfg.dt / 6.0 * (k1[d] + 2 * k2[d] + 2 * k3[d] + k4[d]);
    if (!std::isfinite(out[d]) || std::abs(out[d]) > 1e6) {
      throw NumericError("lorenz: integration diverged; use a smaller dt");
    }
  }
  return out;
}

/// Integrates one trajectory of length + 1 recorded states after burn-in.
template <typename T>
inline void integrate(const LorenzConfig& cfg, Rng& rng, Tensor<T>& clean, std::size_t row) {
  if (!(cfg.dt > 0)) throw UsageError("lorenz: dt must be positive");
  State s;
  if (cfg.init_state) {
    s = *cfg.init_state;
  } else {
    s = {rng.uniform(-15.0, 15.0), rng.uniform(-20.0, 20.0), rng.uniform(5.0, 40.0)};
  }
  for (std::size_t i = 0; i < cfg.burn_in; ++i) s = rk4_step(cfg, s);
  for (std::size_t t = 0; t <= cfg.length; ++t) {
    for (std::size_t d = 0; d < 3; ++d) clean.at3(row, t, d) = static_cast<T>(s[d]);
    s = rk4_step(cfg, s);
  }
}

/// Noisy next-step prediction dataset. Inputs are the noisy first dimension;
/// training targets its next observation. The unobserved dimensions (2, 3)
/// and the clean states are exported per split for out-of-distribution
/// evaluation and geometry analysis; they never enter the training batch.
/// All observations are standardized per dimension (MASE is affine
/// invariant, so scores are unchanged).
template <typename T>
inline SequenceDataset<T> gen_dataset(const LorenzConfig& cfg) {
  if (cfg.n_trajectories < 1) throw UsageError("lorenz: need at least one trajectory");
  if (cfg.length < 2) throw UsageError("lorenz: trajectory length must be >= 2");
  const std::size_t n = cfg.n_trajectories;
  const std::size_t span = cfg.length + 1;
  Tensor<T> clean({n, span, 3});
  Rng root(cfg.seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    integrate(cfg, rng, clean, i);
  }

  // Per-dimension spread of the clean states sets the noise scale.
  std::array<double, 3> mean{}, stddev{};
  for (std::size_t d = 0; d < 3; ++d) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < span; ++t) {
        const double v = clean.at3(i, t, d);
        s1 += v;
        s2 += v * v;
      }
    }
    const double count = static_cast<double>(n * span);
    mean[d] = s1 / count;
    const double var = s2 / count - mean[d] * mean[d];
    stddev[d] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  Tensor<T> obs(clean.shape());
  Rng noise_rng = root.split(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < span; ++t) {
      for (std::size_t d = 0; d < 3; ++d) {
        const double eps = cfg.noise > 0 ? noise_rng.normal() * cfg.noise * stddev[d] : 0.0;
        const double value = (clean.at3(i, t, d) + eps - mean[d]) / stddev[d];
        obs.at3(i, t, d) = static_cast<T>(value);
      }
    }
  }
  Tensor<T> clean_std(clean.shape());
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    const std::size_t d = i % 3;
    clean_std[i] = static_cast<T>((static_cast<double>(clean[i]) - mean[d]) / stddev[d]);
  }

  SequenceDataset<T> ds;
  ds.meta = {{"task", "lorenz"},
             {"seed", cfg.seed},
             {"dt", cfg.dt},
             {"burn_in", cfg.burn_in},
             {"length", cfg.length},
             {"n_trajectories", cfg.n_trajectories},
             {"noise", cfg.noise},
             {"system", {{"sigma", cfg.sigma}, {"rho", cfg.rho}, {"beta", cfg.beta}}},
             {"standardize_mean", mean},
             {"standardize_std", stddev}};

  const std::size_t n_train = static_cast<std::size_t>(cfg.train_frac * static_cast<double>(n));
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_frac * static_cast<double>(n)));
  const std::size_t val_end = std::min(n, n_train + n_val);

  auto build_split = [&](std::size_t begin, std::size_t end, const std::string& name,
                         SequenceBatch<T>& out) {
    if (begin >= end) return;
    const std::size_t m = end - begin;
    out.task = "lorenz";
    out.inputs = Tensor<T>({m, cfg.length, 1});
    out.targets = Tensor<T>({m, cfg.length, 1});
    Tensor<T> ood({m, cfg.length, 2});
    Tensor<T> geometry({m, cfg.length, 3});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < cfg.length; ++t) {
        out.inputs.at3(i, t, 0) = obs.at3(begin + i, t, 0);
        out.targets.at3(i, t, 0) = obs.at3(begin + i, t + 1, 0);
        ood.at3(i, t, 0) = obs.at3(begin + i, t + 1, 1);
        ood.at3(i, t, 1) = obs.at3(begin + i, t + 1, 2);
        for (std::size_t d = 0; d < 3; ++d) geometry.at3(i, t, d) = clean_std.at3(begin + i, t, d);
      }
    }
    ds.extras[name + "_ood"] = std::move(ood);
    ds.extras[name + "_clean"] = std::move(geometry);
  };
  build_split(0, n_train, "train", ds.train);
  build_split(n_train, val_end, "val", ds.val);
  build_split(val_end, n, "test", ds.test);
  return ds;
}

/// The nontrivial fixed points x = y = +-sqrt(beta(rho-1)), z = rho - 1.
inline State fixed_point(const LorenzConfig& cfg, bool positive = true) {
  const double r = std::sqrt(cfg.beta * (cfg.rho - 1.0));
  return {positive ? r : -r, positive ? r : -r, cfg.rho - 1.0};
}

}  // namespace mgrade::lorenz
