#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/errors.hpp"

namespace mgrade {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Rejects unknown keys, suggesting the nearest valid name.
inline void check_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                       const std::string& scope) {
  if (!obj.is_object()) throw UsageError("config section '" + scope + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
    std::string best;
    std::size_t best_d = static_cast<std::size_t>(-1);
    for (const std::string& cand : allowed) {
      const std::size_t d = edit_distance(key, cand);
      if (d < best_d) {
        best_d = d;
        best = cand;
      }
    }
    std::string msg = "unknown config key '" + scope + key + "'";
    if (!best.empty() && best_d <= std::max<std::size_t>(3, key.size() / 2)) {
      msg += " (did you mean '" + scope + best + "'?)";
    }
    throw UsageError(msg);
  }
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw UsageError("unparseable JSON in " + path);
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << text;
  if (!os) throw DataError("write failed: " + path);
}

}  // namespace mgrade
