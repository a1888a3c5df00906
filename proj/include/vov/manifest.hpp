#pragma once

#include <json.hpp>

#include "vov/fsio.hpp"

namespace vov {

constexpr const char* kToolVersion = "1.0.0";

// Sidecar record written next to every CLI output. Outputs themselves are
// byte-reproducible from (command, config digest, seeds); wall_clock_s is the
// only field expected to differ between reruns.
struct RunManifest {
  std::string command;
  uint64_t config_digest = 0;
  std::vector<std::pair<std::string, uint64_t>> seeds;
  std::vector<std::string> outputs;
  double wall_clock_s = 0.0;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["tool_version"] = kToolVersion;
    j["command"] = command;
    j["config_digest"] = config_digest;
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [name, value] : seeds) s[name] = value;
    j["seeds"] = s;
    j["outputs"] = outputs;
    j["wall_clock_s"] = wall_clock_s;
    return j.dump(2) + "\n";
  }
};

inline void write_manifest(const RunManifest& m, const std::string& output_path) {
  write_file_atomic(output_path + ".manifest.json", m.to_json());
}

}  // namespace vov
