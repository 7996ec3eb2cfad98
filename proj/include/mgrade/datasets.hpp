#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/errors.hpp"
#include "mgrade/serialize.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

/// A batch of sequences plus whichever target encoding the task uses:
/// per-step regression targets, per-step class ids, or one label per
/// sequence.
template <typename T>
struct SequenceBatch {
  Tensor<T> inputs;  // (B, T, C)
  Tensor<T> targets; // (B, T, D) or empty
  std::vector<std::int32_t> step_labels;  // B*T or empty
  std::vector<std::int32_t> seq_labels;   // B or empty
  std::string task;

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  std::size_t steps() const { return inputs.empty() ? 0 : inputs.dim(1); }
  bool empty() const { return size() == 0; }

  SequenceBatch select(const std::vector<std::size_t>& rows) const {
    SequenceBatch out;
    out.task = task;
    if (rows.empty()) return out;
    const std::size_t tlen = inputs.dim(1), cin = inputs.dim(2);
    out.inputs = Tensor<T>({rows.size(), tlen, cin});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const T* src = inputs.data() + rows[i] * tlen * cin;
      std::copy(src, src + tlen * cin, out.inputs.data() + i * tlen * cin);
    }
    if (!targets.empty()) {
      const std::size_t d = targets.dim(2);
      out.targets = Tensor<T>({rows.size(), tlen, d});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const T* src = targets.data() + rows[i] * tlen * d;
        std::copy(src, src + tlen * d, out.targets.data() + i * tlen * d);
      }
    }
    if (!step_labels.empty()) {
      out.step_labels.resize(rows.size() * tlen);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(step_labels.begin() + static_cast<std::ptrdiff_t>(rows[i] * tlen),
                  step_labels.begin() + static_cast<std::ptrdiff_t>((rows[i] + 1) * tlen),
                  out.step_labels.begin() + static_cast<std::ptrdiff_t>(i * tlen));
      }
    }
    if (!seq_labels.empty()) {
      out.seq_labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) out.seq_labels[i] = seq_labels[rows[i]];
    }
    return out;
  }

  SequenceBatch head(std::size_t n) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < std::min(n, size()); ++i) rows.push_back(i);
    return select(rows);
  }
};

template <typename T>
struct SequenceDataset {
  SequenceBatch<T> train;
  SequenceBatch<T> val;
  SequenceBatch<T> test;
  std::map<std::string, Tensor<T>> extras;
  nlohmann::json meta;  // provenance: generator config + seed
};

namespace detail {

template <typename T>
inline Tensor<T> labels_to_tensor(const std::vector<std::int32_t>& labels, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = static_cast<T>(labels[i]);
  return t;
}

template <typename T>
inline std::vector<std::int32_t> tensor_to_labels(const Tensor<T>& t) {
  std::vector<std::int32_t> out(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<std::int32_t>(t[i]);
  return out;
}

}  // namespace detail

/// Writes the dataset as one tensor file per role next to a JSON sidecar
/// recording provenance and the file list. Rewriting the same dataset
/// produces byte-identical files.
template <typename T>
inline void save_dataset(const std::string& dir, const SequenceDataset<T>& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json sidecar;
  sidecar["meta"] = ds.meta;
  sidecar["tensors"] = nlohmann::json::object();

  auto dump = [&](const std::string& name, const Tensor<T>& t) {
    if (t.empty()) return;
    const std::string file = name + ".mgt";
    save_tensor((fs::path(dir) / file).string(), t);
    sidecar["tensors"][name] = file;
  };
  auto dump_split = [&](const std::string& prefix, const SequenceBatch<T>& b) {
    if (b.empty()) return;
    sidecar["splits"][prefix] = {{"task", b.task}, {"size", b.size()}};
    dump(prefix + ".inputs", b.inputs);
    dump(prefix + ".targets", b.targets);
    if (!b.step_labels.empty()) {
      dump(prefix + ".step_labels",
           detail::labels_to_tensor<T>(b.step_labels, {b.size(), b.steps()}));
    }
    if (!b.seq_labels.empty()) {
      dump(prefix + ".seq_labels", detail::labels_to_tensor<T>(b.seq_labels, {b.size()}));
    }
  };
  dump_split("train", ds.train);
  dump_split("val", ds.val);
  dump_split("test", ds.test);
  for (const auto& [name, tensor] : ds.extras) dump("extras." + name, tensor);

  std::ofstream os(fs::path(dir) / "dataset.json");
  if (!os) throw DataError("cannot write dataset sidecar in " + dir);
  os << sidecar.dump(2) << "\n";
}

template <typename T>
inline SequenceDataset<T> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path sidecar_path = fs::path(dir) / "dataset.json";
  std::ifstream is(sidecar_path);
  if (!is) throw DataError("missing dataset sidecar: " + sidecar_path.string());
  nlohmann::json sidecar = nlohmann::json::parse(is, nullptr, false);
  if (sidecar.is_discarded()) throw DataError("unparseable dataset sidecar: " + sidecar_path.string());

  SequenceDataset<T> ds;
  ds.meta = sidecar.value("meta", nlohmann::json::object());
  const auto& tensors = sidecar.at("tensors");
  auto fetch = [&](const std::string& name) -> Tensor<T> {
    if (!tensors.contains(name)) return Tensor<T>();
    return load_tensor<T>((fs::path(dir) / tensors.at(name).get<std::string>()).string());
  };
  auto fetch_split = [&](const std::string& prefix) -> SequenceBatch<T> {
    SequenceBatch<T> b;
    if (!sidecar.contains("splits") || !sidecar["splits"].contains(prefix)) return b;
    b.task = sidecar["splits"][prefix].value("task", "");
    b.inputs = fetch(prefix + ".inputs");
    b.targets = fetch(prefix + ".targets");
    const Tensor<T> step = fetch(prefix + ".step_labels");
    if (!step.empty()) b.step_labels = detail::tensor_to_labels(step);
    const Tensor<T> seq = fetch(prefix + ".seq_labels");
    if (!seq.empty()) b.seq_labels = detail::tensor_to_labels(seq);
    return b;
  };
  ds.train = fetch_split("train");
  ds.val = fetch_split("val");
  ds.test = fetch_split("test");
  for (const auto& [name, file] : tensors.items()) {
    if (name.rfind("extras.", 0) == 0) {
      const std::string file_name = file;
      ds.extras[name.substr(7)] = load_tensor<T>((fs::path(dir) / file_name).string());
    }
  }
  return ds;
}

}  // namespace mgrade
