#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/model.hpp"
#include "mgrade/rng.hpp"

namespace mgrade::flipflop {

// Alphabet order: w r i 0 1. Instructions occupy even string positions,
// values odd ones; every valid string starts with w.
inline constexpr std::size_t kAlphabet = 5;
inline constexpr std::int32_t kW = 0, kR = 1, kI = 2, kZero = 3, kOne = 4;

inline char symbol_char(std::int32_t s) {
  static constexpr std::array<char, 5> chars{'w', 'r', 'i', '0', '1'};
  return chars.at(static_cast<std::size_t>(s));
}

/// The four prediction sets: after a value any instruction may follow; after
/// w or i any value; after r only the stored value.
inline constexpr std::int32_t kSetValues = 0;        // {0, 1}
inline constexpr std::int32_t kSetInstructions = 1;  // {w, r, i}
inline constexpr std::int32_t kSetZero = 2;          // {0}
inline constexpr std::int32_t kSetOne = 3;           // {1}

inline const std::array<std::array<double, kAlphabet>, 4>& set_patterns() {
  static const std::array<std::array<double, kAlphabet>, 4> patterns{{
      {0, 0, 0, 1, 1},
      {1, 1, 1, 0, 0},
      {0, 0, 0, 1, 0},
      {0, 0, 0, 0, 1},
  }};
  return patterns;
}

struct FlipFlopConfig {
  std::size_t length = 512;  // must be even
  double p_ignore = 0.8;     // 0.98 in the sparse out-of-distribution regime
  std::uint64_t seed = 0;
};

/// One generated string plus its per-step prediction-set annotation.
struct FlipFlopString {
  std::vector<std::int32_t> symbols;
  std::vector<std::int32_t> set_ids;
};

inline FlipFlopString gen_string(const FlipFlopConfig& cfg, Rng& rng) {
  if (cfg.length % 2 != 0 || cfg.length < 2) {
    throw UsageError("flipflop: sequence length must be even and >= 2");
  }
  if (!(cfg.p_ignore >= 0.0 && cfg.p_ignore < 1.0)) {
    throw UsageError("flipflop: p_ignore must lie in [0, 1)");
  }
  FlipFlopString s;
  s.symbols.resize(cfg.length);
  s.set_ids.resize(cfg.length);
  std::int32_t stored = -1;
  for (std::size_t t = 0; t < cfg.length; t += 2) {
    std::int32_t instr;
    if (t == 0) {
      instr = kW;
    } else {
      const double u = rng.next_double();
      const double p_rest = (1.0 - cfg.p_ignore) / 2.0;
      instr = u < cfg.p_ignore ? kI : (u < cfg.p_ignore + p_rest ? kW : kR);
    }
    std::int32_t value;
    if (instr == kR) {
      if (stored < 0) throw NumericError("flipflop: read before any write");
      value = stored;
    } else {
      value = rng.next_double() < 0.5 ? kZero : kOne;
      if (instr == kW) stored = value;
    }
    s.symbols[t] = instr;
    s.symbols[t + 1] = value;
    s.set_ids[t] = instr == kW || instr == kI ? kSetValues
                                              : (stored == kZero ? kSetZero : kSetOne);
    s.set_ids[t + 1] = kSetInstructions;
  }
  return s;
}

/// Definition check, written independently of the generator: alternation of
/// instructions and values, a leading w, and read-consistency.
inline bool is_valid(const std::vector<std::int32_t>& symbols) {
  if (symbols.empty() || symbols.size() % 2 != 0) return false;
  if (symbols[0] != kW) return false;
  std::int32_t stored = -1;
  for (std::size_t t = 0; t < symbols.size(); t += 2) {
    const std::int32_t instr = symbols[t];
    const std::int32_t value = symbols[t + 1];
    if (instr != kW && instr != kR && instr != kI) return false;
    if (value != kZero && value != kOne) return false;
    if (instr == kR && value != stored) return false;
    if (instr == kW) stored = value;
  }
  return true;
}

/// Batch of one-hot strings with multi-hot prediction-set targets and 4-way
/// set ids per timestep.
template <typename T>
inline SequenceBatch<T> gen_batch(const FlipFlopConfig& cfg, std::size_t n) {
  if (n < 1) throw UsageError("flipflop: need at least one string");
  SequenceBatch<T> batch;
  batch.task = "flipflop";
  batch.inputs = Tensor<T>({n, cfg.length, kAlphabet});
  batch.targets = Tensor<T>({n, cfg.length, kAlphabet});
  batch.step_labels.resize(n * cfg.length);
  Rng root(cfg.seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    const FlipFlopString s = gen_string(cfg, rng);
    for (std::size_t t = 0; t < cfg.length; ++t) {
      batch.inputs.at3(i, t, static_cast<std::size_t>(s.symbols[t])) = T(1);
      const auto& pattern = set_patterns()[static_cast<std::size_t>(s.set_ids[t])];
      for (std::size_t a = 0; a < kAlphabet; ++a) {
        batch.targets.at3(i, t, a) = static_cast<T>(pattern[a]);
      }
      batch.step_labels[i * cfg.length + t] = s.set_ids[t];
    }
  }
  return batch;
}

/// Nearest valid prediction set for a multi-hot output vector; ties resolve
/// to the lowest id.
template <typename T>
inline std::int32_t classify_set(const T* y) {
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < 4; ++k) {
    double d = 0.0;
    for (std::size_t a = 0; a < kAlphabet; ++a) {
      const double e = static_cast<double>(y[a]) - set_patterns()[k][a];
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int32_t>(k);
    }
  }
  return best;
}

struct SetAccuracy {
  double all_steps = 0.0;
  double read_steps = 0.0;  // positions whose target is {0} or {1}
};

/// 4-way prediction-set accuracy of network outputs. Classification heads are
/// scored by argmax over the four set logits, regression heads by nearest
/// multi-hot pattern.
template <typename T>
inline SetAccuracy set_accuracy(const NetworkParams<T>& params, const SequenceBatch<T>& batch) {
  const NetworkForward<T> fw = network_forward(params, batch.inputs, /*keep_caches=*/false);
  const std::size_t n = batch.size(), tlen = batch.steps();
  std::size_t hit = 0, read_hit = 0, reads = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < tlen; ++t) {
      const std::int32_t want = batch.step_labels[i * tlen + t];
      std::int32_t got;
      if (params.config.output == 4) {
        const T* logits = fw.output.data() + (i * tlen + t) * 4;
        got = 0;
        for (std::int32_t k = 1; k < 4; ++k) {
          if (logits[k] > logits[got]) got = k;
        }
      } else {
        got = classify_set(fw.output.data() + (i * tlen + t) * kAlphabet);
      }
      hit += got == want;
      if (want == kSetZero || want == kSetOne) {
        reads += 1;
        read_hit += got == want;
      }
    }
  }
  SetAccuracy acc;
  acc.all_steps = static_cast<double>(hit) / static_cast<double>(n * tlen);
  acc.read_steps = reads == 0 ? 1.0 : static_cast<double>(read_hit) / static_cast<double>(reads);
  return acc;
}

// ---------------------------------------------------------------------------
// Constructive single-layer solution. The hidden state is split into a
// stored half that latches the value following the most recent w and a
// current half that reproduces the input; a linear 4-way readout with a bias
// on the {1} class recovers the prediction set. M is the finite gate
// saturation magnitude standing in for the construction's infinite weights.
// ---------------------------------------------------------------------------

inline NetworkConfig oracle_config() {
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 2 * kAlphabet;
  c.input = kAlphabet;
  c.output = 4;
  c.conv = ConvMode::L;
  c.taps = 2;
  c.max_delay = 1;
  c.sigma = 0.5;
  c.head = Head::ClassifyPerStep;
  c.use_mlp = false;
  c.use_norm = false;
  c.gru_skip = false;
  c.mlp_skip = false;
  c.decoder_bias = true;
  return c;
}

template <typename T>
inline NetworkParams<T> build_oracle(double gate_magnitude, const NetworkConfig& config) {
  if (!(gate_magnitude >= 0.0)) throw UsageError("flipflop oracle: magnitude must be >= 0");
  const NetworkConfig want = oracle_config();
  if (config.layers != 1 || config.taps != 2 || config.hidden != 2 * kAlphabet ||
      config.conv != ConvMode::L || config.max_delay != 1 || config.gru_skip || config.use_mlp ||
      config.use_norm || config.output != want.output || config.input != want.input ||
      !config.decoder_bias || config.head != Head::ClassifyPerStep) {
    throw UsageError(
        "flipflop oracle: config must be a single bare layer with two taps and H = 2|alphabet|");
  }
  const T m = static_cast<T>(gate_magnitude);
  NetworkParams<T> p = init_network<T>(config, 0);
  const std::size_t s = kAlphabet;

  // Encoder duplicates the one-hot input into both halves.
  p.encoder.w.fill(T(0));
  p.encoder.b.fill(T(0));
  for (std::size_t j = 0; j < s; ++j) {
    p.encoder.w.at2(j, j) = T(1);
    p.encoder.w.at2(s + j, j) = T(1);
  }

  // Conv: channels [0, s) tap the current step, channels [s, 2s) the
  // previous one.
  auto& conv = *p.layers[0].conv;
  conv.sigmas.fill(static_cast<T>(config.sigma));
  for (std::size_t h = 0; h < 2 * s; ++h) {
    conv.positions.at2(h, 0) = T(0);
    conv.positions.at2(h, 1) = T(1);
    conv.weights.at2(h, 0) = h < s ? T(1) : T(0);
    conv.weights.at2(h, 1) = h < s ? T(0) : T(1);
  }

  // Gates: the stored half opens only when the previous symbol was w; the
  // current half is always open.
  auto& gru = *p.layers[0].gru;
  gru.gate.w.fill(T(0));
  gru.gate.b.fill(T(0));
  gru.candidate.w.fill(T(0));
  gru.candidate.b.fill(T(0));
  for (std::size_t j = 0; j < s; ++j) {
    gru.gate.w.at2(j, s + static_cast<std::size_t>(kW)) = T(2) * m;
    gru.gate.b[j] = -m;
    gru.gate.b[s + j] = m;
    gru.candidate.w.at2(j, j) = T(1);      // stored candidate copies x_t
    gru.candidate.w.at2(s + j, j) = T(1);  // current candidate copies x_t
  }

  // Readout per the case analysis over the four sets.
  p.decoder.w.fill(T(0));
  p.decoder.b.fill(T(0));
  const std::size_t cur = s;  // offset of the current half in the hidden state
  p.decoder.w.at2(kSetValues, cur + static_cast<std::size_t>(kW)) = T(2);
  p.decoder.w.at2(kSetValues, cur + static_cast<std::size_t>(kI)) = T(2);
  p.decoder.w.at2(kSetInstructions, cur + static_cast<std::size_t>(kZero)) = T(2);
  p.decoder.w.at2(kSetInstructions, cur + static_cast<std::size_t>(kOne)) = T(2);
  p.decoder.w.at2(kSetZero, cur + static_cast<std::size_t>(kR)) = T(3);
  p.decoder.w.at2(kSetZero, static_cast<std::size_t>(kOne)) = T(-4);
  p.decoder.w.at2(kSetOne, cur + static_cast<std::size_t>(kR)) = T(3);
  p.decoder.w.at2(kSetOne, static_cast<std::size_t>(kOne)) = T(4);
  p.decoder.b[kSetOne] = T(-4);
  return p;
}

template <typename T>
inline NetworkParams<T> build_oracle(double gate_magnitude) {
  return build_oracle<T>(gate_magnitude, oracle_config());
}

/// Adversarial string "w v, i-padding, r v" with the write/read pair a fixed
/// recall distance apart.
inline std::vector<std::int32_t> adversarial_string(std::size_t recall_distance, std::int32_t v,
                                                    Rng& rng) {
  if (recall_distance < 2 || recall_distance % 2 != 0) {
    throw UsageError("flipflop: recall distance must be even and >= 2");
  }
  std::vector<std::int32_t> s(recall_distance + 2);
  s[0] = kW;
  s[1] = v;
  for (std::size_t t = 2; t < recall_distance; t += 2) {
    s[t] = kI;
    s[t + 1] = rng.next_double() < 0.5 ? kZero : kOne;
  }
  s[recall_distance] = kR;
  s[recall_distance + 1] = v;
  return s;
}

/// Best achievable value accuracy at the read position for a predictor that
/// sees only the last `context` symbols: group test strings by window
/// content and vote the empirical majority per group. When the window covers
/// the written value this reaches 1.0; otherwise it hovers at chance.
inline double fixed_context_chance_demo(std::size_t context, std::size_t recall_distance,
                                        std::size_t n, std::uint64_t seed) {
  if (context < 1) throw UsageError("fixed_context_chance_demo: context must be >= 1");
  if (n < 1) throw UsageError("fixed_context_chance_demo: need at least one string");
  Rng root(seed);
  std::map<std::string, std::array<std::size_t, 2>> votes;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    const std::int32_t v = rng.next_double() < 0.5 ? kZero : kOne;
    const std::vector<std::int32_t> s = adversarial_string(recall_distance, v, rng);
    const std::size_t predict_at = recall_distance + 1;
    const std::size_t begin = predict_at > context ? predict_at - context : 0;
    std::string key;
    for (std::size_t t = begin; t < predict_at; ++t) key.push_back(symbol_char(s[t]));
    votes[key][static_cast<std::size_t>(v - kZero)] += 1;
  }
  std::size_t correct = 0;
  for (const auto& [key, counts] : votes) correct += std::max(counts[0], counts[1]);
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace mgrade::flipflop
