#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/conv.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/gru.hpp"
#include "mgrade/layers.hpp"
#include "mgrade/rng.hpp"
#include "mgrade/serialize.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

enum class Head { ClassifyLast, ClassifyPerStep, RegressPerStep };
enum class Recurrence { Gru, Relu };
enum class Readout { Last, Mean };

/// Conv placement in a layer: one of the kernel variants, or none at all
/// (the purely recurrent baseline runs the same code path with the conv
/// reduced to identity).
enum class ConvMode { CD, EID, L, None };

inline ConvVariant to_variant(ConvMode m) {
  switch (m) {
    case ConvMode::CD: return ConvVariant::CD;
    case ConvMode::EID: return ConvVariant::EID;
    case ConvMode::L: return ConvVariant::L;
    default: throw UsageError("conv mode 'none' has no kernel variant");
  }
}

struct NetworkConfig {
  std::size_t layers = 1;
  std::size_t hidden = 16;
  std::size_t input = 1;
  std::size_t output = 1;

  ConvMode conv = ConvMode::CD;
  std::size_t taps = 1;          // K
  std::size_t dilation = 1;      // d (CD)
  std::size_t base_dilation = 1; // d_b (EID)
  std::size_t max_delay = 0;     // gamma (L)
  double sigma = 0.5;
  PositionInit position_init = PositionInit::Uniform;
  bool train_sigma = false;

  Head head = Head::RegressPerStep;
  Readout readout = Readout::Last;
  Recurrence recurrence = Recurrence::Gru;
  bool use_mlp = true;
  bool use_norm = true;
  bool gru_skip = true;
  bool mlp_skip = true;
  bool decoder_bias = false;
  double norm_eps = 1e-5;
  // Initial update-gate bias; negative values start the recurrence with a
  // longer retention half-life.
  double gate_bias_init = 0.0;
};

inline void validate_config(const NetworkConfig& c) {
  if (c.layers < 1) throw UsageError("network config: layers must be >= 1");
  if (c.hidden < 1 || c.input < 1 || c.output < 1) {
    throw UsageError("network config: hidden/input/output must be >= 1");
  }
  if (c.conv != ConvMode::None && c.taps < 1) {
    throw UsageError("network config: taps must be >= 1");
  }
  if (c.conv == ConvMode::L && !(c.sigma > 0)) {
    throw UsageError("network config: sigma must be positive for variant L");
  }
}

inline std::string head_name(Head h) {
  switch (h) {
    case Head::ClassifyLast: return "classify_last";
    case Head::ClassifyPerStep: return "classify_per_step";
    case Head::RegressPerStep: return "regress_per_step";
  }
  return "?";
}

inline Head head_from_name(const std::string& s) {
  if (s == "classify_last") return Head::ClassifyLast;
  if (s == "classify_per_step") return Head::ClassifyPerStep;
  if (s == "regress_per_step") return Head::RegressPerStep;
  throw UsageError("unknown head '" + s + "'");
}

inline std::string conv_mode_name(ConvMode m) {
  switch (m) {
    case ConvMode::CD: return "cd";
    case ConvMode::EID: return "eid";
    case ConvMode::L: return "l";
    case ConvMode::None: return "none";
  }
  return "?";
}

inline ConvMode conv_mode_from_name(const std::string& s) {
  if (s == "cd") return ConvMode::CD;
  if (s == "eid") return ConvMode::EID;
  if (s == "l") return ConvMode::L;
  if (s == "none") return ConvMode::None;
  throw UsageError("unknown conv variant '" + s + "'");
}

inline nlohmann::json to_json(const NetworkConfig& c) {
  return nlohmann::json{
      {"layers", c.layers},
      {"hidden", c.hidden},
      {"input", c.input},
      {"output", c.output},
      {"conv",
       {{"variant", conv_mode_name(c.conv)},
        {"taps", c.taps},
        {"dilation", c.dilation},
        {"base_dilation", c.base_dilation},
        {"max_delay", c.max_delay},
        {"sigma", c.sigma},
        {"position_init", c.position_init == PositionInit::Uniform ? "uniform" : "dilated"},
        {"train_sigma", c.train_sigma}}},
      {"head", head_name(c.head)},
      {"readout", c.readout == Readout::Last ? "last" : "mean"},
      {"recurrence", c.recurrence == Recurrence::Gru ? "gru" : "relu"},
      {"use_mlp", c.use_mlp},
      {"use_norm", c.use_norm},
      {"gru_skip", c.gru_skip},
      {"mlp_skip", c.mlp_skip},
      {"decoder_bias", c.decoder_bias},
      {"norm_eps", c.norm_eps},
      {"gate_bias_init", c.gate_bias_init}};
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.input = j.value("input", c.input);
  c.output = j.value("output", c.output);
  if (j.contains("conv")) {
    const auto& jc = j.at("conv");
    c.conv = conv_mode_from_name(jc.value("variant", conv_mode_name(c.conv)));
    c.taps = jc.value("taps", c.taps);
    c.dilation = jc.value("dilation", c.dilation);
    c.base_dilation = jc.value("base_dilation", c.base_dilation);
    c.max_delay = jc.value("max_delay", c.max_delay);
    c.sigma = jc.value("sigma", c.sigma);
    const std::string pi = jc.value("position_init", "uniform");
    if (pi != "uniform" && pi != "dilated") throw UsageError("unknown position_init '" + pi + "'");
    c.position_init = pi == "uniform" ? PositionInit::Uniform : PositionInit::Dilated;
    c.train_sigma = jc.value("train_sigma", c.train_sigma);
  }
  c.head = head_from_name(j.value("head", head_name(c.head)));
  const std::string ro = j.value("readout", "last");
  if (ro != "last" && ro != "mean") throw UsageError("unknown readout '" + ro + "'");
  c.readout = ro == "last" ? Readout::Last : Readout::Mean;
  const std::string rec = j.value("recurrence", "gru");
  if (rec != "gru" && rec != "relu") throw UsageError("unknown recurrence '" + rec + "'");
  c.recurrence = rec == "gru" ? Recurrence::Gru : Recurrence::Relu;
  c.use_mlp = j.value("use_mlp", c.use_mlp);
  c.use_norm = j.value("use_norm", c.use_norm);
  c.gru_skip = j.value("gru_skip", c.gru_skip);
  c.mlp_skip = j.value("mlp_skip", c.mlp_skip);
  c.decoder_bias = j.value("decoder_bias", c.decoder_bias);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.gate_bias_init = j.value("gate_bias_init", c.gate_bias_init);
  validate_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct LayerParams {
  std::optional<KernelSpec<T>> conv;
  std::optional<GruParams<T>> gru;
  std::optional<MlpParams<T>> mlp;
  std::optional<NormParams<T>> norm;
};

template <typename T>
struct NetworkParams {
  NetworkConfig config;
  LinearParams<T> encoder;  // bias carried at runtime
  std::vector<LayerParams<T>> layers;
  LinearParams<T> decoder;  // bias-free unless config.decoder_bias
};

template <typename T>
inline KernelSpec<T> layer_kernel_spec(const NetworkConfig& c, std::size_t layer, Rng& rng) {
  return make_kernel_spec<T>(to_variant(c.conv), c.hidden, c.taps, c.dilation, c.base_dilation,
                             layer, c.max_delay, static_cast<T>(c.sigma), c.position_init, rng);
}

template <typename T>
inline NetworkParams<T> init_network(const NetworkConfig& c, std::uint64_t seed) {
  validate_config(c);
  NetworkParams<T> p;
  p.config = c;
  Rng root(seed);
  Rng enc_rng = root.split(0);
  p.encoder = make_linear<T>(c.hidden, c.input, /*bias=*/true, enc_rng);
  for (std::size_t l = 0; l < c.layers; ++l) {
    Rng lr = root.split(1 + l);
    LayerParams<T> layer;
    if (c.conv != ConvMode::None) {
      Rng conv_rng = lr.split(0);
      layer.conv = layer_kernel_spec<T>(c, l, conv_rng);
    }
    if (c.recurrence == Recurrence::Gru) {
      Rng gru_rng = lr.split(1);
      layer.gru = make_gru<T>(c.hidden, gru_rng);
      layer.gru->gate.b.fill(static_cast<T>(c.gate_bias_init));
    }
    if (c.use_mlp) {
      Rng mlp_rng = lr.split(2);
      layer.mlp = make_mlp<T>(c.hidden, mlp_rng);
    }
    if (c.use_norm) layer.norm = make_norm<T>(c.hidden);
    p.layers.push_back(std::move(layer));
  }
  Rng dec_rng = root.split(1 + c.layers);
  p.decoder = make_linear<T>(c.output, c.hidden, c.decoder_bias, dec_rng);
  return p;
}

// ---------------------------------------------------------------------------
// Parameter visitation (drives the optimizer, serialization, and counting)
// ---------------------------------------------------------------------------

enum class ParamGroup { Weights, Bias, Positions };

/// Calls fn(name, group, tensor&) for every stored parameter tensor.
template <typename T, typename F>
inline void visit_params(NetworkParams<T>& p, F&& fn) {
  fn("encoder.w", ParamGroup::Weights, p.encoder.w);
  if (p.encoder.has_bias) fn("encoder.b", ParamGroup::Bias, p.encoder.b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    auto& layer = p.layers[l];
    if (layer.conv) {
      fn((base + "conv.weights").c_str(), ParamGroup::Weights, layer.conv->weights);
      if (layer.conv->variant == ConvVariant::L) {
        fn((base + "conv.positions").c_str(), ParamGroup::Positions, layer.conv->positions);
        fn((base + "conv.sigmas").c_str(), ParamGroup::Positions, layer.conv->sigmas);
      }
    }
    if (layer.gru) {
      fn((base + "gru.wz").c_str(), ParamGroup::Weights, layer.gru->gate.w);
      fn((base + "gru.bz").c_str(), ParamGroup::Bias, layer.gru->gate.b);
      fn((base + "gru.wh").c_str(), ParamGroup::Weights, layer.gru->candidate.w);
      fn((base + "gru.bh").c_str(), ParamGroup::Bias, layer.gru->candidate.b);
    }
    if (layer.mlp) {
      fn((base + "mlp.w1").c_str(), ParamGroup::Weights, layer.mlp->w1);
      fn((base + "mlp.b1").c_str(), ParamGroup::Bias, layer.mlp->b1);
      fn((base + "mlp.w2").c_str(), ParamGroup::Weights, layer.mlp->w2);
      fn((base + "mlp.b2").c_str(), ParamGroup::Bias, layer.mlp->b2);
    }
    if (layer.norm) {
      fn((base + "norm.gain").c_str(), ParamGroup::Bias, layer.norm->gain);
      fn((base + "norm.shift").c_str(), ParamGroup::Bias, layer.norm->shift);
    }
  }
  fn("decoder.w", ParamGroup::Weights, p.decoder.w);
  if (p.decoder.has_bias) fn("decoder.b", ParamGroup::Bias, p.decoder.b);
}

template <typename T, typename F>
inline void visit_params(const NetworkParams<T>& p, F&& fn) {
  visit_params(const_cast<NetworkParams<T>&>(p),
               [&](const char* name, ParamGroup g, Tensor<T>& t) {
                 fn(name, g, static_cast<const Tensor<T>&>(t));
               });
}

/// Every float actually stored in the parameter struct.
template <typename T>
inline std::size_t enumerate_stored_params(const NetworkParams<T>& p) {
  std::size_t n = 0;
  visit_params(p, [&](const char*, ParamGroup, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

// ---------------------------------------------------------------------------
// Parameter counting (closed form)
// ---------------------------------------------------------------------------

struct ParamBreakdown {
  std::size_t encoder = 0;    // H_in * H
  std::size_t conv = 0;       // per layer
  std::size_t recurrent = 0;  // per layer
  std::size_t mlp = 0;        // per layer
  std::size_t norm = 0;       // per layer
  std::size_t decoder = 0;    // H * H_out
  std::size_t total = 0;      // footprint composition over all layers
  // Floats stored at runtime beyond the footprint composition (the encoder
  // bias, plus the decoder bias when one is configured).
  std::size_t runtime_extra = 0;
  std::size_t stored_total = 0;
};

/// Per-component parameter counts. The conv term is K*H for the fixed-grid
/// variants and 3*K*H for variant L, whose checkpoints carry a weight, a
/// position, and an interpolation width per tap.
inline ParamBreakdown count_params(const NetworkConfig& c) {
  validate_config(c);
  ParamBreakdown b;
  const std::size_t h = c.hidden;
  b.encoder = c.input * h;
  switch (c.conv) {
    case ConvMode::None: b.conv = 0; break;
    case ConvMode::L: b.conv = 3 * c.taps * h; break;
    default: b.conv = c.taps * h; break;
  }
  b.recurrent = c.recurrence == Recurrence::Gru ? gru_param_count(h) : 0;
  b.mlp = c.use_mlp ? mlp_param_count(h) : 0;
  b.norm = c.use_norm ? norm_param_count(h) : 0;
  b.decoder = h * c.output;
  b.total = b.encoder + b.decoder + c.layers * (b.conv + b.recurrent + b.mlp + b.norm);
  b.runtime_extra = h + (c.decoder_bias ? c.output : 0);
  b.stored_total = b.total + b.runtime_extra;
  return b;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct LayerForward {
  Tensor<T> conv_in;
  Tensor<T> conv_out;
  GruCache<T> gru;
  Tensor<T> relu_out;     // recurrence == Relu
  Tensor<T> mlp_in;       // g (post gru skip)
  MlpCache<T> mlp;
  Tensor<T> norm_in;      // m (post mlp skip)
  NormCache<T> norm;
  Tensor<T> out;
};

template <typename T>
struct NetworkForward {
  Tensor<T> encoded;
  std::vector<LayerForward<T>> layers;
  Tensor<T> features;          // last layer output, (B, T, H)
  Tensor<T> pooled;            // classify_last only, (B, H)
  Tensor<T> output;            // per head: (B, H_out) or (B, T, H_out)
  std::vector<Tensor<T>> hidden;  // recurrent output per layer, pre-skip
};

template <typename T>
inline Tensor<T> layer_forward(const NetworkConfig& c, const LayerParams<T>& lp, const Tensor<T>& x,
                               LayerForward<T>* f) {
  Tensor<T> cur = x;
  if (f) f->conv_in = x;
  if (lp.conv) {
    cur = conv_forward(*lp.conv, cur);
  }
  if (f) f->conv_out = cur;

  Tensor<T> rec_out;
  if (lp.gru) {
    const Tensor<T> h0(Shape{cur.dim(0), cur.dim(2)});
    rec_out = gru_forward(*lp.gru, cur, h0, f ? &f->gru : nullptr);
  } else {
    rec_out = relu(cur);
    if (f) f->relu_out = rec_out;
  }
  Tensor<T> g = c.gru_skip ? add(cur, rec_out) : rec_out;

  Tensor<T> m = g;
  if (lp.mlp) {
    if (f) f->mlp_in = g;
    Tensor<T> mo = mlp_forward(*lp.mlp, g, f ? &f->mlp : nullptr);
    m = c.mlp_skip ? add(g, mo) : std::move(mo);
  }

  Tensor<T> y = m;
  if (lp.norm) {
    if (f) f->norm_in = m;
    y = layernorm_forward(*lp.norm, m, static_cast<T>(c.norm_eps), f ? &f->norm : nullptr);
  }
  if (f) f->out = y;
  return y;
}

template <typename T>
inline NetworkForward<T> network_forward(const NetworkParams<T>& p, const Tensor<T>& u,
                                         bool keep_caches = true) {
  validate_config(p.config);
  if (u.rank() != 3 || u.dim(2) != p.config.input) {
    throw ShapeError("network: input " + shape_str(u.shape()) + " must be (B, T, " +
                     std::to_string(p.config.input) + ")");
  }
  NetworkForward<T> fw;
  fw.encoded = linear_forward(p.encoder, u);
  Tensor<T> cur = fw.encoded;
  fw.layers.resize(keep_caches ? p.layers.size() : 0);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    LayerForward<T> scratch;
    LayerForward<T>* cache = keep_caches ? &fw.layers[l] : &scratch;
    cur = layer_forward(p.config, p.layers[l], cur, cache);
    fw.hidden.push_back(p.layers[l].gru ? cache->gru.h : cache->relu_out);
  }
  fw.features = cur;

  if (p.config.head == Head::ClassifyLast) {
    const std::size_t batch = cur.dim(0), tlen = cur.dim(1), width = cur.dim(2);
    Tensor<T> pooled(Shape{batch, width});
    if (p.config.readout == Readout::Last) {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = cur.data() + (b * tlen + (tlen - 1)) * width;
        std::copy(src, src + width, pooled.data() + b * width);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < tlen; ++t) {
          const T* src = cur.data() + (b * tlen + t) * width;
          for (std::size_t i = 0; i < width; ++i) pooled[b * width + i] += src[i];
        }
        for (std::size_t i = 0; i < width; ++i) pooled[b * width + i] /= static_cast<T>(tlen);
      }
    }
    fw.pooled = pooled;
    fw.output = linear_forward(p.decoder, pooled);
  } else {
    fw.output = linear_forward(p.decoder, cur);
  }
  return fw;
}

template <typename T>
struct LayerGrads {
  Tensor<T> conv_w, conv_p, conv_s;
  Tensor<T> gru_wz, gru_bz, gru_wh, gru_bh;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor<T> norm_gain, norm_shift;
};

template <typename T>
struct NetworkGrads {
  Tensor<T> enc_w, enc_b;
  std::vector<LayerGrads<T>> layers;
  Tensor<T> dec_w, dec_b;
};

template <typename T, typename F>
inline void visit_grads(const NetworkParams<T>& p, NetworkGrads<T>& g, F&& fn) {
  fn("encoder.w", g.enc_w);
  if (p.encoder.has_bias) fn("encoder.b", g.enc_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    auto& lg = g.layers[l];
    const auto& lp = p.layers[l];
    if (lp.conv) {
      fn((base + "conv.weights").c_str(), lg.conv_w);
      if (lp.conv->variant == ConvVariant::L) {
        fn((base + "conv.positions").c_str(), lg.conv_p);
        fn((base + "conv.sigmas").c_str(), lg.conv_s);
      }
    }
    if (lp.gru) {
      fn((base + "gru.wz").c_str(), lg.gru_wz);
      fn((base + "gru.bz").c_str(), lg.gru_bz);
      fn((base + "gru.wh").c_str(), lg.gru_wh);
      fn((base + "gru.bh").c_str(), lg.gru_bh);
    }
    if (lp.mlp) {
      fn((base + "mlp.w1").c_str(), lg.mlp_w1);
      fn((base + "mlp.b1").c_str(), lg.mlp_b1);
      fn((base + "mlp.w2").c_str(), lg.mlp_w2);
      fn((base + "mlp.b2").c_str(), lg.mlp_b2);
    }
    if (lp.norm) {
      fn((base + "norm.gain").c_str(), lg.norm_gain);
      fn((base + "norm.shift").c_str(), lg.norm_shift);
    }
  }
  fn("decoder.w", g.dec_w);
  if (p.decoder.has_bias) fn("decoder.b", g.dec_b);
}

template <typename T>
inline Tensor<T> layer_backward(const NetworkConfig& c, const LayerParams<T>& lp,
                                const LayerForward<T>& f, const Tensor<T>& grad_out,
                                LayerGrads<T>& g) {
  Tensor<T> gm = grad_out;
  if (lp.norm) {
    NormGrads<T> ng = layernorm_backward(*lp.norm, f.norm, grad_out);
    g.norm_gain = std::move(ng.gain);
    g.norm_shift = std::move(ng.shift);
    gm = std::move(ng.x);
  }

  Tensor<T> gg = gm;
  if (lp.mlp) {
    MlpGrads<T> mg = mlp_backward(*lp.mlp, f.mlp_in, f.mlp, gm);
    g.mlp_w1 = std::move(mg.w1);
    g.mlp_b1 = std::move(mg.b1);
    g.mlp_w2 = std::move(mg.w2);
    g.mlp_b2 = std::move(mg.b2);
    gg = c.mlp_skip ? add(gm, mg.x) : std::move(mg.x);
  }

  // gg is the gradient at g = [conv_out +] rec_out.
  Tensor<T> gconv_out;
  if (lp.gru) {
    const Tensor<T> h0(Shape{f.conv_out.dim(0), f.conv_out.dim(2)});
    GruGrads<T> rg = gru_backward(*lp.gru, f.conv_out, h0, f.gru, gg);
    g.gru_wz = std::move(rg.gate.w);
    g.gru_bz = std::move(rg.gate.b);
    g.gru_wh = std::move(rg.candidate.w);
    g.gru_bh = std::move(rg.candidate.b);
    gconv_out = c.gru_skip ? add(gg, rg.x) : std::move(rg.x);
  } else {
    Tensor<T> grelu = gg;
    for (std::size_t i = 0; i < grelu.numel(); ++i) {
      if (f.relu_out[i] <= T(0)) grelu[i] = T(0);
    }
    gconv_out = c.gru_skip ? add(gg, grelu) : std::move(grelu);
  }

  if (lp.conv) {
    const bool want_pos = lp.conv->variant == ConvVariant::L;
    ConvGrads<T> cg = conv_backward(*lp.conv, f.conv_in, gconv_out, want_pos, want_pos);
    g.conv_w = std::move(cg.weights);
    if (want_pos) {
      g.conv_p = std::move(cg.positions);
      g.conv_s = std::move(cg.sigmas);
    }
    return std::move(cg.input);
  }
  return gconv_out;
}

/// Backpropagates grad_output (shaped like forward.output) through the whole
/// network; returns parameter gradients.
template <typename T>
inline NetworkGrads<T> network_backward(const NetworkParams<T>& p, const Tensor<T>& u,
                                        const NetworkForward<T>& fw, const Tensor<T>& grad_output) {
  NetworkGrads<T> g;
  g.layers.resize(p.layers.size());

  Tensor<T> gfeat;
  if (p.config.head == Head::ClassifyLast) {
    LinearGrads<T> dg = linear_backward(p.decoder, fw.pooled, grad_output);
    g.dec_w = std::move(dg.w);
    if (p.decoder.has_bias) g.dec_b = std::move(dg.b);
    const std::size_t batch = fw.features.dim(0), tlen = fw.features.dim(1),
                      width = fw.features.dim(2);
    gfeat = Tensor<T>(fw.features.shape());
    if (p.config.readout == Readout::Last) {
      for (std::size_t b = 0; b < batch; ++b) {
        std::copy(dg.x.data() + b * width, dg.x.data() + (b + 1) * width,
                  gfeat.data() + (b * tlen + (tlen - 1)) * width);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < tlen; ++t) {
          for (std::size_t i = 0; i < width; ++i) {
            gfeat[(b * tlen + t) * width + i] = dg.x[b * width + i] / static_cast<T>(tlen);
          }
        }
      }
    }
  } else {
    LinearGrads<T> dg = linear_backward(p.decoder, fw.features, grad_output);
    g.dec_w = std::move(dg.w);
    if (p.decoder.has_bias) g.dec_b = std::move(dg.b);
    gfeat = std::move(dg.x);
  }

  for (std::size_t l = p.layers.size(); l-- > 0;) {
    gfeat = layer_backward(p.config, p.layers[l], fw.layers[l], gfeat, g.layers[l]);
  }

  LinearGrads<T> eg = linear_backward(p.encoder, u, gfeat, /*want_gx=*/false);
  g.enc_w = std::move(eg.w);
  g.enc_b = std::move(eg.b);
  return g;
}

// ---------------------------------------------------------------------------
// Streaming inference
// ---------------------------------------------------------------------------

/// Per-stream state: one ring buffer and one recurrent vector per layer.
/// With identity kernels the state is exactly layers * hidden floats.
template <typename T>
class StreamingState {
 public:
  explicit StreamingState(const NetworkParams<T>& params) : params_(&params) {
    const auto& c = params.config;
    for (std::size_t l = 0; l < c.layers; ++l) {
      const auto& lp = params.layers[l];
      if (lp.conv) {
        buffers_.emplace_back(c.hidden, lp.conv->gamma);
        kernels_.push_back(materialize_kernel(*lp.conv));
      } else {
        buffers_.emplace_back(c.hidden, 0);
        kernels_.push_back(Tensor<T>());
      }
      hstate_.emplace_back(Shape{c.hidden});
    }
  }

  /// Floats of mutable inference state (conv buffers + recurrent vectors).
  std::size_t state_float_count() const {
    std::size_t n = 0;
    for (const auto& buf : buffers_) n += buf.capacity() * buf.channels();
    for (const auto& h : hstate_) n += h.numel();
    return n;
  }

  /// Consumes one input vector (H_in), returns the decoder output for this
  /// step. For classify_last heads the caller reads the final step's output.
  Tensor<T> step(const Tensor<T>& u_t) {
    const auto& p = *params_;
    const auto& c = p.config;
    if (u_t.shape() != Shape{c.input}) {
      throw ShapeError("stream: input " + shape_str(u_t.shape()) + " must be (" +
                       std::to_string(c.input) + ")");
    }
    Tensor<T> cur = linear_forward(p.encoder, u_t.reshaped(Shape{1, c.input})).reshaped(
        Shape{c.hidden});
    for (std::size_t l = 0; l < c.layers; ++l) {
      const auto& lp = p.layers[l];
      Tensor<T> cv = lp.conv ? stream_step(buffers_[l], *lp.conv, cur, kernels_[l]) : cur;
      Tensor<T> rec(Shape{c.hidden});
      if (lp.gru) {
        Tensor<T> zrow(Shape{c.hidden});
        Tensor<T> crow(Shape{c.hidden});
        rows::linear(cv.data(), 1, c.hidden, lp.gru->gate.w.data(), c.hidden,
                     lp.gru->gate.b.data(), zrow.data());
        rows::linear(cv.data(), 1, c.hidden, lp.gru->candidate.w.data(), c.hidden,
                     lp.gru->candidate.b.data(), crow.data());
        Tensor<T>& h = hstate_[l];
        for (std::size_t i = 0; i < c.hidden; ++i) {
          const T zv = T(1) / (T(1) + std::exp(-zrow[i]));
          h[i] = (T(1) - zv) * h[i] + zv * crow[i];
          rec[i] = h[i];
        }
      } else {
        for (std::size_t i = 0; i < c.hidden; ++i) rec[i] = cv[i] > T(0) ? cv[i] : T(0);
      }
      Tensor<T> g = c.gru_skip ? add(cv, rec) : rec;
      Tensor<T> m = g;
      if (lp.mlp) {
        Tensor<T> mo = mlp_forward(*lp.mlp, g.reshaped(Shape{1, c.hidden}));
        m = c.mlp_skip ? add(g, mo.reshaped(Shape{c.hidden})) : mo.reshaped(Shape{c.hidden});
      }
      cur = lp.norm ? layernorm_forward(*lp.norm, m.reshaped(Shape{1, c.hidden}),
                                        static_cast<T>(c.norm_eps))
                          .reshaped(Shape{c.hidden})
                    : m;
    }
    return linear_forward(p.decoder, cur.reshaped(Shape{1, c.hidden}))
        .reshaped(Shape{c.output});
  }

  void reset() {
    for (auto& buf : buffers_) buf.reset();
    for (auto& h : hstate_) h.fill(T(0));
  }

 private:
  const NetworkParams<T>* params_;
  std::vector<ConvRingBuffer<T>> buffers_;
  std::vector<Tensor<T>> kernels_;
  std::vector<Tensor<T>> hstate_;
};

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

template <typename T>
inline Archive<T> params_to_archive(const NetworkParams<T>& p) {
  Archive<T> ar;
  ar.config = to_json(p.config);
  visit_params(p, [&](const char* name, ParamGroup, const Tensor<T>& t) {
    ar.tensors.emplace(name, t);
  });
  return ar;
}

template <typename T>
inline NetworkParams<T> params_from_archive(const Archive<T>& ar) {
  const NetworkConfig c = config_from_json(ar.config);
  NetworkParams<T> p = init_network<T>(c, 0);
  visit_params(p, [&](const char* name, ParamGroup, Tensor<T>& t) {
    const auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw DataError(std::string("checkpoint missing tensor ") + name);
    if (it->second.shape() != t.shape()) {
      throw DataError(std::string("checkpoint tensor ") + name + " has shape " +
                      shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
    }
    t = it->second;
  });
  return p;
}

}  // namespace mgrade
