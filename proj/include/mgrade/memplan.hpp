#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/errors.hpp"
#include "mgrade/model.hpp"

namespace mgrade::memplan {

/// Inference memory accounting in float-element units: parameters plus the
/// per-layer input buffers the causal convolutions require.
struct MemoryReport {
  ParamBreakdown params;
  std::vector<std::size_t> layer_buffers;  // gamma_l per layer, in steps
  std::size_t buffer_sum = 0;              // S = sum_l gamma_l
  std::size_t buffer_mem = 0;              // H * S
  std::size_t param_mem = 0;               // footprint composition
  std::size_t total_mem = 0;               // param_mem + buffer_mem
  std::vector<std::string> notes;
};

/// Per-layer buffered history in steps: d(K-1) for constant dilation,
/// d_b 2^l (K-1) for exponentially increasing dilation. Variant L charges
/// the trained positions (max tap reach + 3 sigma, capped at gamma); with no
/// trained checkpoint the configured maximum delay is the bound.
template <typename T>
inline std::size_t layer_buffer(const NetworkConfig& c, std::size_t layer,
                                const NetworkParams<T>* trained) {
  switch (c.conv) {
    case ConvMode::None: return 0;
    case ConvMode::CD: return c.dilation * (c.taps - 1);
    case ConvMode::EID: return c.base_dilation * (std::size_t{1} << layer) * (c.taps - 1);
    case ConvMode::L:
      if (trained) {
        if (!trained->layers[layer].conv) throw DataError("memplan: checkpoint has no conv kernel");
        return effective_gamma(*trained->layers[layer].conv);
      }
      return c.max_delay;
  }
  return 0;
}

template <typename T>
inline MemoryReport footprint(const NetworkConfig& c, const NetworkParams<T>* trained = nullptr) {
  validate_config(c);
  if (c.conv == ConvMode::L && !trained && c.max_delay == 0 && c.taps > 1) {
    throw UsageError(
        "memplan: variant L needs either a trained checkpoint or an explicit max delay bound");
  }
  MemoryReport report;
  report.params = count_params(c);
  report.param_mem = report.params.total;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t gamma = layer_buffer(c, l, trained);
    report.layer_buffers.push_back(gamma);
    report.buffer_sum += gamma;
  }
  report.buffer_mem = c.hidden * report.buffer_sum;
  report.total_mem = report.param_mem + report.buffer_mem;
  if (c.conv == ConvMode::EID) {
    report.notes.push_back(
        "eid buffer accounting follows H * sum_l gamma_l; externally published totals for "
        "EID stacks use an inconsistent composition and are not reproduced");
  }
  return report;
}

inline nlohmann::json to_json(const MemoryReport& r) {
  return nlohmann::json{
      {"params",
       {{"encoder", r.params.encoder},
        {"conv_per_layer", r.params.conv},
        {"recurrent_per_layer", r.params.recurrent},
        {"mlp_per_layer", r.params.mlp},
        {"norm_per_layer", r.params.norm},
        {"decoder", r.params.decoder},
        {"total", r.params.total},
        {"runtime_extra", r.params.runtime_extra},
        {"stored_total", r.params.stored_total}}},
      {"layer_buffers", r.layer_buffers},
      {"buffer_sum", r.buffer_sum},
      {"buffer_mem", r.buffer_mem},
      {"param_mem", r.param_mem},
      {"total_mem", r.total_mem},
      {"notes", r.notes}};
}

struct SweepEntry {
  NetworkConfig config;
  std::string label;
};

/// One CSV row per configuration; the machine-readable counterpart of the
/// accuracy-versus-memory sweeps. The accuracy column is left blank for an
/// external join against training logs.
inline std::string sweep_csv(const std::vector<SweepEntry>& grid) {
  if (grid.empty()) throw UsageError("memplan sweep: empty grid");
  std::ostringstream os;
  os << "label,variant,layers,hidden,taps,dilation,base_dilation,max_delay,params,buffer,total,"
        "accuracy\n";
  for (const SweepEntry& entry : grid) {
    const MemoryReport r = footprint<float>(entry.config);
    const NetworkConfig& c = entry.config;
    os << entry.label << ',' << conv_mode_name(c.conv) << ',' << c.layers << ',' << c.hidden << ','
       << c.taps << ',' << c.dilation << ',' << c.base_dilation << ',' << c.max_delay << ','
       << r.param_mem << ',' << r.buffer_mem << ',' << r.total_mem << ",\n";
  }
  return os.str();
}

}  // namespace mgrade::memplan
