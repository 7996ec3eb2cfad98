#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/model.hpp"
#include "mgrade/rng.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // w.r.t. the network output
};

/// Mean cross-entropy over rows of logits against integer labels.
template <typename T>
inline LossResult<T> cross_entropy_loss(const Tensor<T>& logits,
                                        const std::vector<std::int32_t>& labels) {
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.numel() / classes;
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  const Tensor<T> probs = softmax(logits);
  LossResult<T> out;
  out.grad = Tensor<T>(logits.shape());
  double loss = 0.0;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " outside " +
                      std::to_string(classes) + " classes");
    }
    const T* p = probs.data() + r * classes;
    loss -= std::log(std::max(static_cast<double>(p[label]), 1e-300)) * inv_rows;
    T* g = out.grad.data() + r * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = static_cast<T>((static_cast<double>(p[c]) - (c == static_cast<std::size_t>(label))) *
                            inv_rows);
    }
  }
  out.value = loss;
  if (!std::isfinite(out.value)) throw NumericError("cross_entropy: non-finite loss");
  return out;
}

template <typename T>
inline LossResult<T> mse_loss(const Tensor<T>& outputs, const Tensor<T>& targets) {
  check_same_shape(outputs, targets, "mse");
  LossResult<T> out;
  out.grad = Tensor<T>(outputs.shape());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(outputs.numel());
  for (std::size_t i = 0; i < outputs.numel(); ++i) {
    const double err = static_cast<double>(outputs[i]) - static_cast<double>(targets[i]);
    loss += err * err * inv_n;
    out.grad[i] = static_cast<T>(2.0 * err * inv_n);
  }
  out.value = loss;
  if (!std::isfinite(out.value)) throw NumericError("mse: non-finite loss");
  return out;
}

/// Per-dimension scale of the naive persistence forecast on a target series:
/// mean over (b, t >= 1) of |y_t - y_{t-1}|. This is the denominator of the
/// mean absolute standardized error and is computed once per split.
template <typename T>
inline std::vector<double> mase_denominator(const Tensor<T>& targets) {
  if (targets.rank() != 3 || targets.dim(1) < 2) {
    throw ShapeError("mase: targets must be (B, T>=2, D), got " + shape_str(targets.shape()));
  }
  const std::size_t batch = targets.dim(0), tlen = targets.dim(1), dims = targets.dim(2);
  std::vector<double> denom(dims, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 1; t < tlen; ++t) {
      for (std::size_t d = 0; d < dims; ++d) {
        denom[d] += std::abs(static_cast<double>(targets.at3(b, t, d)) -
                             static_cast<double>(targets.at3(b, t - 1, d)));
      }
    }
  }
  const double count = static_cast<double>(batch * (tlen - 1));
  for (std::size_t d = 0; d < dims; ++d) {
    denom[d] /= count;
    if (denom[d] < 1e-12) {
      throw NumericError("mase: persistence denominator vanishes on dimension " +
                         std::to_string(d) + " (constant target series)");
    }
  }
  return denom;
}

/// MASE = mean over dimensions of (MAE_d / denom_d); 1.0 is the skill of the
/// naive persistence forecast.
template <typename T>
inline LossResult<T> mase_loss(const Tensor<T>& outputs, const Tensor<T>& targets,
                               const std::vector<double>& denom) {
  check_same_shape(outputs, targets, "mase");
  const std::size_t dims = outputs.shape().back();
  if (denom.size() != dims) throw ShapeError("mase: denominator dimension mismatch");
  const std::size_t rows = outputs.numel() / dims;
  LossResult<T> out;
  out.grad = Tensor<T>(outputs.shape());
  double loss = 0.0;
  const double inv = 1.0 / (static_cast<double>(rows) * static_cast<double>(dims));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t d = 0; d < dims; ++d) {
      const std::size_t i = r * dims + d;
      const double err = static_cast<double>(outputs[i]) - static_cast<double>(targets[i]);
      loss += std::abs(err) / denom[d] * inv;
      out.grad[i] = static_cast<T>((err > 0 ? 1.0 : err < 0 ? -1.0 : 0.0) / denom[d] * inv);
    }
  }
  out.value = loss;
  if (!std::isfinite(out.value)) throw NumericError("mase: non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer: AdamW on the weights group, Adam on bias and positions, with
// positions clamped back into [0, gamma] after every step.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // weights group only, decoupled
};

template <typename T>
class GroupedAdam {
 public:
  explicit GroupedAdam(AdamConfig cfg) : cfg_(cfg) {}

  std::size_t step_count() const { return step_; }

  void step(NetworkParams<T>& params, NetworkGrads<T>& grads, double lr) {
    step_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    std::map<std::string, std::pair<Tensor<T>*, ParamGroup>> slots;
    visit_params(params, [&](const char* name, ParamGroup g, Tensor<T>& t) {
      slots[name] = {&t, g};
    });
    visit_grads(params, grads, [&](const char* name, Tensor<T>& gt) {
      const auto it = slots.find(name);
      if (it == slots.end()) throw UsageError(std::string("optimizer: unknown parameter ") + name);
      Tensor<T>& param = *it->second.first;
      const ParamGroup group = it->second.second;
      if (gt.empty()) gt = Tensor<T>(param.shape());
      for (std::size_t i = 0; i < gt.numel(); ++i) {
        if (!std::isfinite(gt[i])) {
          throw NumericError(std::string("optimizer: non-finite gradient in ") + name);
        }
      }
      Moments& m = moments_[it->first];
      if (m.m.empty()) {
        m.m = Tensor<T>(param.shape());
        m.v = Tensor<T>(param.shape());
      }
      const bool decay = group == ParamGroup::Weights && cfg_.weight_decay > 0.0;
      for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = static_cast<double>(gt[i]);
        const double m1 = cfg_.beta1 * static_cast<double>(m.m[i]) + (1.0 - cfg_.beta1) * g;
        const double m2 = cfg_.beta2 * static_cast<double>(m.v[i]) + (1.0 - cfg_.beta2) * g * g;
        m.m[i] = static_cast<T>(m1);
        m.v[i] = static_cast<T>(m2);
        double update = lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + cfg_.eps);
        if (decay) update += lr * cfg_.weight_decay * static_cast<double>(param[i]);
        param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
      }
    });

    for (auto& layer : params.layers) {
      if (layer.conv) clamp_positions(*layer.conv);
    }
  }

  void save(Archive<T>& ar) const {
    ar.meta["optimizer_step"] = step_;
    for (const auto& [name, m] : moments_) {
      ar.tensors.emplace("opt." + name + ".m", m.m);
      ar.tensors.emplace("opt." + name + ".v", m.v);
    }
  }

  void load(const Archive<T>& ar) {
    step_ = ar.meta.value("optimizer_step", std::size_t{0});
    moments_.clear();
    for (const auto& [name, tensor] : ar.tensors) {
      if (name.rfind("opt.", 0) != 0) continue;
      const bool is_m = name.size() > 2 && name.substr(name.size() - 2) == ".m";
      const std::string key = name.substr(4, name.size() - 4 - 2);
      Moments& m = moments_[key];
      (is_m ? m.m : m.v) = tensor;
    }
  }

 private:
  struct Moments {
    Tensor<T> m, v;
  };
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup to the base rate over the first
// warmup fraction of epochs, cosine decay to zero afterwards. Epoch-level.
// ---------------------------------------------------------------------------

struct Schedule {
  double base_lr = 0.004;
  std::size_t total_epochs = 100;
  double warmup_frac = 0.5;

  double lr_at(std::size_t epoch) const {
    const double total = static_cast<double>(total_epochs);
    const double warm = warmup_frac * total;
    const double e = static_cast<double>(epoch);
    if (warm > 0.0 && e < warm) return base_lr * e / warm;
    if (total <= warm) return base_lr;
    const double progress = std::min(1.0, (e - warm) / (total - warm));
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class TrainLoss { Auto, CrossEntropy, Mse, Mase };

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double base_lr = 0.004;
  double warmup_frac = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::uint64_t seed = 0;
  std::size_t limit = 0;  // restrict the training set, 0 = all
  TrainLoss loss = TrainLoss::Auto;
  // Early stop once the validation metric reaches the threshold (epochs still
  // capped by `epochs`). Enabled when metric_target is finite.
  double metric_target = std::numeric_limits<double>::quiet_NaN();
  bool metric_higher_is_better = true;
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
};

inline std::string metrics_csv(const std::vector<EpochRow>& rows) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_metric,lr\n";
  os << std::setprecision(17);
  for (const EpochRow& r : rows) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_metric << ',' << r.lr
       << '\n';
  }
  return os.str();
}

template <typename T>
struct TrainResult {
  NetworkParams<T> params;       // final
  NetworkParams<T> best_params;  // best validation metric
  std::vector<EpochRow> history;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

template <typename T>
using MetricFn = std::function<double(const NetworkParams<T>&, const SequenceBatch<T>&)>;

namespace detail {

template <typename T>
inline TrainLoss resolve_loss(TrainLoss requested, const NetworkConfig& config,
                              const SequenceBatch<T>& batch) {
  if (requested != TrainLoss::Auto) return requested;
  if (config.head == Head::ClassifyLast || config.head == Head::ClassifyPerStep) {
    return TrainLoss::CrossEntropy;
  }
  return batch.task == "lorenz" ? TrainLoss::Mase : TrainLoss::Mse;
}

template <typename T>
inline LossResult<T> batch_loss(const NetworkConfig& config, TrainLoss kind,
                                const Tensor<T>& output, const SequenceBatch<T>& batch,
                                const std::vector<double>& mase_denom) {
  switch (kind) {
    case TrainLoss::CrossEntropy:
      if (config.head == Head::ClassifyLast) {
        if (batch.seq_labels.empty()) throw DataError("classify_last head needs sequence labels");
        return cross_entropy_loss(output, batch.seq_labels);
      }
      if (batch.step_labels.empty()) throw DataError("classify_per_step head needs step labels");
      return cross_entropy_loss(output, batch.step_labels);
    case TrainLoss::Mse:
      if (batch.targets.empty()) throw DataError("mse loss needs per-step targets");
      return mse_loss(output, batch.targets);
    case TrainLoss::Mase:
      if (batch.targets.empty()) throw DataError("mase loss needs per-step targets");
      return mase_loss(output, batch.targets, mase_denom);
    default:
      throw UsageError("unresolved training loss");
  }
}

template <typename T>
inline void clip_gradients(const NetworkParams<T>& params, NetworkGrads<T>& grads,
                           double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  visit_grads(const_cast<NetworkParams<T>&>(params), grads, [&](const char*, Tensor<T>& g) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
  });
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const T factor = static_cast<T>(clip_norm / norm);
  visit_grads(const_cast<NetworkParams<T>&>(params), grads, [&](const char*, Tensor<T>& g) {
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= factor;
  });
}

}  // namespace detail

/// Deterministic (seeded) training loop. The validation metric is supplied by
/// the task; when absent, the negative validation loss stands in so "higher
/// is better" always holds for checkpoint selection.
template <typename T>
inline TrainResult<T> train(const NetworkConfig& config, const TrainOptions& opt,
                            const SequenceBatch<T>& train_set, const SequenceBatch<T>& val_set,
                            MetricFn<T> metric = nullptr,
                            NetworkParams<T>* warm_start = nullptr,
                            GroupedAdam<T>* warm_optimizer = nullptr,
                            std::size_t first_epoch = 0) {
  if (train_set.empty()) throw DataError("train: empty training set");
  validate_config(config);

  SequenceBatch<T> train_data =
      opt.limit > 0 && opt.limit < train_set.size() ? train_set.head(opt.limit) : train_set;
  const SequenceBatch<T>& val_data = val_set.empty() ? train_data : val_set;

  const TrainLoss loss_kind = detail::resolve_loss(opt.loss, config, train_data);
  std::vector<double> train_denom, val_denom;
  if (loss_kind == TrainLoss::Mase) {
    train_denom = mase_denominator(train_data.targets);
    val_denom = mase_denominator(val_data.targets);
  }

  TrainResult<T> result;
  result.params = warm_start ? *warm_start : init_network<T>(config, opt.seed);
  AdamConfig acfg;
  acfg.lr = opt.base_lr;
  acfg.beta1 = opt.beta1;
  acfg.beta2 = opt.beta2;
  acfg.eps = opt.adam_eps;
  acfg.weight_decay = opt.weight_decay;
  GroupedAdam<T> local_opt(acfg);
  GroupedAdam<T>& optimizer = warm_optimizer ? *warm_optimizer : local_opt;

  Schedule schedule{opt.base_lr, opt.epochs, opt.warmup_frac};
  Rng shuffle_root(opt.seed, /*stream=*/1);

  result.best_metric = -std::numeric_limits<double>::infinity();
  const bool early = std::isfinite(opt.metric_target);

  for (std::size_t epoch = first_epoch; epoch < opt.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng erng = shuffle_root.split(epoch);
    erng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const SequenceBatch<T> batch = train_data.select(rows);
      const NetworkForward<T> fw = network_forward(result.params, batch.inputs);
      LossResult<T> loss;
      try {
        loss = detail::batch_loss(config, loss_kind, fw.output, batch, train_denom);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches));
      }
      loss_sum += loss.value;
      batches += 1;
      NetworkGrads<T> grads = network_backward(result.params, batch.inputs, fw, loss.grad);
      detail::clip_gradients(result.params, grads, opt.clip_norm);
      try {
        optimizer.step(result.params, grads, lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches - 1));
      }
    }

    const NetworkForward<T> vfw = network_forward(result.params, val_data.inputs, false);
    const LossResult<T> vloss =
        detail::batch_loss(config, loss_kind, vfw.output, val_data, val_denom);
    const double val_metric =
        metric ? metric(result.params, val_data) : -vloss.value;

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    row.val_loss = vloss.value;
    row.val_metric = val_metric;
    row.lr = lr;
    result.history.push_back(row);
    result.epochs_run = epoch + 1;

    const double oriented = opt.metric_higher_is_better ? val_metric : -val_metric;
    if (oriented > result.best_metric) {
      result.best_metric = oriented;
      result.best_epoch = epoch;
      result.best_params = result.params;
    }
    if (early) {
      const bool reached = opt.metric_higher_is_better ? val_metric >= opt.metric_target
                                                       : val_metric <= opt.metric_target;
      if (reached) break;
    }
  }
  if (result.best_params.layers.empty()) result.best_params = result.params;
  return result;
}

}  // namespace mgrade
