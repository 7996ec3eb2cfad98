#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/model.hpp"
#include "mgrade/tasks/flipflop.hpp"
#include "mgrade/tensor.hpp"
#include "mgrade/training.hpp"

namespace mgrade::analysis {

/// Time-aligned embeddings of the same trajectory points: rows correspond
/// one-to-one between the original state space and the hidden space.
struct EmbeddingPair {
  Tensor64 original;  // (N, D0)
  Tensor64 hidden;    // (N, Dh)
};

namespace detail {

/// Indices of the k nearest rows to `row` under Euclidean distance, ties
/// broken toward lower index.
inline std::vector<std::size_t> knn_row(const Tensor64& points, std::size_t row, std::size_t k) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n - 1);
  const double* pr = points.data() + row * d;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == row) continue;
    double s = 0.0;
    const double* pj = points.data() + j * d;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = pr[c] - pj[c];
      s += diff * diff;
    }
    dist.emplace_back(s, j);
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

}  // namespace detail

/// Mean percentage of shared k-nearest neighbours between the two point
/// clouds; 100 when the hidden space is an exact (up to isometry and scale)
/// copy of the original, about 100 * k / (N - 1) for unrelated clouds.
inline double nn_overlap(const EmbeddingPair& pair, std::size_t k = 20) {
  if (pair.original.rank() != 2 || pair.hidden.rank() != 2 ||
      pair.original.dim(0) != pair.hidden.dim(0)) {
    throw ShapeError("nn_overlap: embeddings must be (N, D) with matching N");
  }
  const std::size_t n = pair.original.dim(0);
  if (n <= k) {
    throw UsageError("nn_overlap: need more than k = " + std::to_string(k) + " points, got " +
                     std::to_string(n));
  }
  double overlap = 0.0;
  std::vector<char> mark(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::size_t> a = detail::knn_row(pair.original, i, k);
    const std::vector<std::size_t> b = detail::knn_row(pair.hidden, i, k);
    for (std::size_t j : a) mark[j] = 1;
    std::size_t shared = 0;
    for (std::size_t j : b) shared += mark[j];
    for (std::size_t j : a) mark[j] = 0;
    overlap += static_cast<double>(shared) / static_cast<double>(k);
  }
  return overlap / static_cast<double>(n) * 100.0;
}

// ---------------------------------------------------------------------------
// PCA via cyclic Jacobi on the covariance matrix.
// ---------------------------------------------------------------------------

struct PcaResult {
  Tensor64 projections;          // (N, n_components)
  Tensor64 components;           // (D, n_components), orthonormal columns
  Tensor64 mean;                 // (D)
  std::vector<double> explained_variance;  // ratios, descending, sum <= 1
};

inline PcaResult pca(const Tensor64& data, std::size_t n_components) {
  if (data.rank() != 2 || data.dim(0) < 2) {
    throw UsageError("pca: need an (N >= 2, D) matrix, got " + shape_str(data.shape()));
  }
  const std::size_t n = data.dim(0), d = data.dim(1);
  if (n_components > d) throw UsageError("pca: more components than dimensions");

  PcaResult out;
  out.mean = Tensor64({d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) out.mean[c] += data.at2(i, c);
  }
  for (std::size_t c = 0; c < d; ++c) out.mean[c] /= static_cast<double>(n);

  // Covariance (population) of the centered data.
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double va = data.at2(i, a) - out.mean[a];
      for (std::size_t b = a; b < d; ++b) {
        cov[a * d + b] += va * (data.at2(i, b) - out.mean[b]);
      }
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(n);
      cov[b * d + a] = cov[a * d + b];
    }
  }

  // Cyclic Jacobi sweeps; V accumulates the eigenvectors.
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) off += cov[p * d + q] * cov[p * d + q];
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = cov[p * d + q];
        if (std::abs(apq) < 1e-30) continue;
        const double app = cov[p * d + p], aqq = cov[q * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = cov[i * d + p], aiq = cov[i * d + q];
          cov[i * d + p] = c * aip - s * aiq;
          cov[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double api = cov[p * d + i], aqi = cov[q * d + i];
          cov[p * d + i] = c * api - s * aqi;
          cov[q * d + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = v[i * d + p], viq = v[i * d + q];
          v[i * d + p] = c * vip - s * viq;
          v[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::pair<double, std::size_t>> eig(d);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    eig[i] = {std::max(cov[i * d + i], 0.0), i};
    trace += eig[i].first;
  }
  std::sort(eig.begin(), eig.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });

  out.components = Tensor64({d, n_components});
  out.explained_variance.resize(n_components);
  for (std::size_t c = 0; c < n_components; ++c) {
    out.explained_variance[c] = trace > 0 ? eig[c].first / trace : 0.0;
    for (std::size_t i = 0; i < d; ++i) out.components.at2(i, c) = v[i * d + eig[c].second];
  }
  out.projections = Tensor64({n, n_components});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < n_components; ++c) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        s += (data.at2(i, a) - out.mean[a]) * out.components.at2(a, c);
      }
      out.projections.at2(i, c) = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe: ordinary least squares (tiny ridge for conditioning) from
// hidden states to a target. Used to score dimensions the network never saw
// during training.
// ---------------------------------------------------------------------------

struct LinearProbe {
  Tensor64 w;  // (D_out, D_in)
  Tensor64 b;  // (D_out)
};

inline LinearProbe fit_probe(const Tensor64& x, const Tensor64& y, double ridge = 1e-6) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
    throw ShapeError("probe: need matching (N, Din) and (N, Dout)");
  }
  const std::size_t n = x.dim(0), din = x.dim(1), dout = y.dim(1);
  // Normal equations over inputs augmented with a constant column.
  const std::size_t d = din + 1;
  std::vector<double> ata(d * d, 0.0), atb(d * dout, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (std::size_t c = 0; c < din; ++c) row[c] = x.at2(i, c);
    row[din] = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b2 = a; b2 < d; ++b2) ata[a * d + b2] += row[a] * row[b2];
      for (std::size_t o = 0; o < dout; ++o) atb[a * dout + o] += row[a] * y.at2(i, o);
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b2 = 0; b2 < a; ++b2) ata[a * d + b2] = ata[b2 * d + a];
    if (a < din) ata[a * d + a] += ridge * static_cast<double>(n);  // intercept unregularized
  }
  // Gaussian elimination with partial pivoting.
  std::vector<double> m = ata, rhs = atb;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r2 = col + 1; r2 < d; ++r2) {
      if (std::abs(m[r2 * d + col]) > std::abs(m[pivot * d + col])) pivot = r2;
    }
    if (std::abs(m[pivot * d + col]) < 1e-30) throw NumericError("probe: singular normal matrix");
    if (pivot != col) {
      for (std::size_t c = 0; c < d; ++c) std::swap(m[pivot * d + c], m[col * d + c]);
      for (std::size_t o = 0; o < dout; ++o) std::swap(rhs[pivot * dout + o], rhs[col * dout + o]);
    }
    const double diag = m[col * d + col];
    for (std::size_t r2 = 0; r2 < d; ++r2) {
      if (r2 == col) continue;
      const double f = m[r2 * d + col] / diag;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < d; ++c) m[r2 * d + c] -= f * m[col * d + c];
      for (std::size_t o = 0; o < dout; ++o) rhs[r2 * dout + o] -= f * rhs[col * dout + o];
    }
  }
  LinearProbe probe;
  probe.w = Tensor64({dout, din});
  probe.b = Tensor64({dout});
  for (std::size_t o = 0; o < dout; ++o) {
    for (std::size_t c = 0; c < din; ++c) {
      probe.w.at2(o, c) = rhs[c * dout + o] / m[c * d + c];
    }
    probe.b[o] = rhs[din * dout + o] / m[din * d + din];
  }
  return probe;
}

inline Tensor64 apply_probe(const LinearProbe& probe, const Tensor64& x) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = probe.w.dim(0);
  Tensor64 y({n, dout});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < dout; ++o) {
      double s = probe.b[o];
      for (std::size_t c = 0; c < din; ++c) s += probe.w.at2(o, c) * x.at2(i, c);
      y.at2(i, o) = s;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Hidden-state export and the evaluation suite.
// ---------------------------------------------------------------------------

/// Final-layer recurrent outputs, flattened to (B*T', H) with the first
/// `warmup` steps of every sequence dropped.
template <typename T>
inline Tensor64 export_hidden(const NetworkParams<T>& params, const Tensor<T>& inputs,
                              std::size_t warmup = 0, std::size_t max_rows = 0) {
  const NetworkForward<T> fw = network_forward(params, inputs, /*keep_caches=*/true);
  const Tensor<T>& hidden = fw.hidden.back();
  const std::size_t batch = hidden.dim(0), tlen = hidden.dim(1), width = hidden.dim(2);
  if (warmup >= tlen) throw UsageError("export_hidden: warmup longer than the sequence");
  const std::size_t keep = tlen - warmup;
  std::size_t rows = batch * keep;
  if (max_rows > 0) rows = std::min(rows, max_rows);
  Tensor64 out({rows, width});
  std::size_t r = 0;
  for (std::size_t b = 0; b < batch && r < rows; ++b) {
    for (std::size_t t = warmup; t < tlen && r < rows; ++t, ++r) {
      for (std::size_t i = 0; i < width; ++i) {
        out.at2(r, i) = static_cast<double>(hidden.at3(b, t, i));
      }
    }
  }
  return out;
}

/// Rows of a (B, T, D) tensor aligned with export_hidden's layout.
template <typename T>
inline Tensor64 flatten_steps(const Tensor<T>& x, std::size_t warmup, std::size_t max_rows = 0) {
  const std::size_t batch = x.dim(0), tlen = x.dim(1), width = x.dim(2);
  const std::size_t keep = tlen - warmup;
  std::size_t rows = batch * keep;
  if (max_rows > 0) rows = std::min(rows, max_rows);
  Tensor64 out({rows, width});
  std::size_t r = 0;
  for (std::size_t b = 0; b < batch && r < rows; ++b) {
    for (std::size_t t = warmup; t < tlen && r < rows; ++t, ++r) {
      for (std::size_t i = 0; i < width; ++i) out.at2(r, i) = static_cast<double>(x.at3(b, t, i));
    }
  }
  return out;
}

inline double mase_of(const Tensor64& pred, const Tensor64& target,
                      const std::vector<double>& denom) {
  return mase_loss(pred, target, denom).value;
}

struct LorenzEvalOptions {
  std::size_t warmup = 50;
  std::size_t overlap_points = 2000;
  std::size_t overlap_k = 20;
};

/// Lorenz evaluation: observed-dimension MASE from the trained decoder,
/// unobserved-dimension MASE from a linear probe fitted on the validation
/// split and scored on the test split, and nearest-neighbour overlap between
/// clean states and hidden states.
template <typename T>
inline nlohmann::json eval_lorenz(const NetworkParams<T>& params, const SequenceDataset<T>& ds,
                                  const LorenzEvalOptions& opt = {}) {
  if (ds.val.empty() || ds.test.empty()) throw DataError("lorenz eval: needs val and test splits");
  nlohmann::json out;

  {  // Observed dimension on the validation split.
    const NetworkForward<T> fw = network_forward(params, ds.val.inputs, false);
    const auto denom = mase_denominator(ds.val.targets);
    out["val_MASE_obs"] =
        mase_loss(fw.output, ds.val.targets, denom).value;
  }

  {  // Unobserved dimensions: probe fitted on val hidden states.
    const Tensor64 hval = export_hidden(params, ds.val.inputs, opt.warmup);
    const Tensor64 yval = flatten_steps(ds.extras.at("val_ood"), opt.warmup);
    const LinearProbe probe = fit_probe(hval, yval);
    const Tensor64 htest = export_hidden(params, ds.test.inputs, opt.warmup);
    const Tensor64 ytest = flatten_steps(ds.extras.at("test_ood"), opt.warmup);
    const Tensor64 pred = apply_probe(probe, htest);
    const Tensor64 ytest3 = ytest.reshaped({ds.test.size(), ds.test.steps() - opt.warmup, 2});
    const auto denom = mase_denominator(ytest3);
    out["OOD_MASE_unobs"] = mase_of(pred, ytest, denom);
    for (std::size_t d = 0; d < 2; ++d) {
      const Tensor64 pd = slice(pred, 1, d, d + 1);
      const Tensor64 yd = slice(ytest, 1, d, d + 1);
      out["OOD_MASE_unobs_dims"].push_back(mase_of(pd, yd, {denom[d]}));
    }
  }

  {  // Geometry: clean original states against hidden states.
    EmbeddingPair pair;
    pair.hidden = export_hidden(params, ds.test.inputs, opt.warmup, opt.overlap_points);
    pair.original = flatten_steps(ds.extras.at("test_clean"), opt.warmup, opt.overlap_points);
    out["nn_overlap"] = nn_overlap(pair, opt.overlap_k);
    const std::size_t comps = std::min<std::size_t>(3, pair.hidden.dim(1));
    const PcaResult components = pca(pair.hidden, comps);
    out["pca_explained_variance"] = components.explained_variance;
  }
  return out;
}

/// Dispatching evaluation entry point; emits the metric keys that apply to
/// the checkpoint's task.
template <typename T>
inline nlohmann::json eval_suite(const NetworkParams<T>& params, const SequenceDataset<T>& ds,
                                 const std::string& task) {
  const SequenceBatch<T>& eval_split = !ds.test.empty() ? ds.test : (!ds.val.empty() ? ds.val : ds.train);
  if (task == "lorenz") {
    if (params.config.head != Head::RegressPerStep) {
      throw UsageError("eval: checkpoint head " + head_name(params.config.head) +
                       " does not match the lorenz task");
    }
    return eval_lorenz(params, ds);
  }
  if (task == "flipflop") {
    if (params.config.head == Head::ClassifyLast) {
      throw UsageError("eval: per-sequence classification head does not match the flipflop task");
    }
    const flipflop::SetAccuracy acc = flipflop::set_accuracy(params, eval_split);
    return {{"set_accuracy", acc.all_steps}, {"read_accuracy", acc.read_steps}};
  }
  if (task == "smnist" || task == "gscifar") {
    if (params.config.head != Head::ClassifyLast) {
      throw UsageError("eval: image classification requires a classify_last head");
    }
    const NetworkForward<T> fw = network_forward(params, eval_split.inputs, false);
    std::size_t hits = 0;
    const std::size_t classes = params.config.output;
    for (std::size_t i = 0; i < eval_split.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (fw.output.at2(i, c) > fw.output.at2(i, best)) best = c;
      }
      hits += static_cast<std::int32_t>(best) == eval_split.seq_labels[i];
    }
    return {{"accuracy", static_cast<double>(hits) / static_cast<double>(eval_split.size())}};
  }
  throw UsageError("eval: unknown task '" + task + "'");
}

}  // namespace mgrade::analysis
