#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/jsonutil.hpp"
#include "mgrade/serialize.hpp"
#include "mgrade/version.hpp"

namespace mgrade {

/// Record of one CLI invocation: resolved config, input digests, outputs and
/// wall-clock timings. Exactly one manifest per artifact directory; metric
/// files themselves stay timing-free so reruns are byte-identical.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed) {
    j_["command"] = std::move(command);
    j_["seed"] = seed;
    j_["toolkit_version"] = kVersion;
    j_["inputs"] = nlohmann::json::object();
    j_["outputs"] = nlohmann::json::array();
    j_["timings_seconds"] = nlohmann::json::object();
  }

  void set_config(const nlohmann::json& config) { j_["config"] = config; }

  void add_input(const std::string& path) {
    if (std::filesystem::is_directory(path)) {
      nlohmann::json digests = nlohmann::json::object();
      std::vector<std::filesystem::path> files;
      for (const auto& entry : std::filesystem::directory_iterator(path)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& file : files) {
        digests[file.filename().string()] = hex64(file_digest(file.string()));
      }
      j_["inputs"][path] = digests;
    } else {
      j_["inputs"][path] = hex64(file_digest(path));
    }
  }

  void add_output(const std::string& path) { j_["outputs"].push_back(path); }

  class Timer {
   public:
    Timer(RunManifest& manifest, std::string name)
        : manifest_(manifest), name_(std::move(name)),
          start_(std::chrono::steady_clock::now()) {}
    ~Timer() {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      manifest_.j_["timings_seconds"][name_] = secs;
    }

   private:
    RunManifest& manifest_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
  };

  Timer time(std::string name) { return Timer(*this, std::move(name)); }

  void write(const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_text_file((std::filesystem::path(dir) / "manifest.json").string(), j_.dump(2) + "\n");
  }

  const nlohmann::json& json() const { return j_; }

 private:
  friend class Timer;
  nlohmann::json j_;
};

}  // namespace mgrade
