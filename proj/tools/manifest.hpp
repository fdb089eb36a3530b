#pragma once

// Run manifests: one `<output>.manifest.json` beside every artifact.

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"

namespace rrtf::cli {

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  const std::string data(std::istreambuf_iterator<char>(in), {});
  return sha256_hex(data);
}

struct Invocation {
  std::vector<std::string> argv;
  std::string cwd;
};

struct StageRecord {
  std::string stage;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  std::vector<FailureRecord> failures;
  nlohmann::json summary = nlohmann::json::object();
};

inline std::filesystem::path manifest_path(const std::filesystem::path& output) {
  return output.string() + ".manifest.json";
}

/// Writes a manifest for every existing output of the stage.
inline void write_manifests(const StageRecord& rec, const Invocation& inv, const nlohmann::json& effective_config,
                            const std::string& status) {
  using nlohmann::json;
  json inputs = json::object(), outputs = json::object();
  for (const auto& p : rec.inputs) inputs[p.string()] = sha256_file(p);
  for (const auto& p : rec.outputs)
    if (std::filesystem::exists(p)) outputs[p.string()] = sha256_file(p);
  json failures = json::array();
  for (const auto& f : rec.failures) failures.push_back({{"stage", f.stage}, {"key", f.key}, {"message", f.message}});
  const auto config_text = effective_config.dump();
  const json manifest = {{"tool_version", kToolVersion},
                         {"stage", rec.stage},
                         {"argv", inv.argv},
                         {"cwd", inv.cwd},
                         {"config", effective_config},
                         {"config_sha256", sha256_hex(config_text)},
                         {"inputs", inputs},
                         {"outputs", outputs},
                         {"status", status},
                         {"partial", status != "ok"},
                         {"failures", failures},
                         {"summary", rec.summary}};
  for (const auto& p : rec.outputs) {
    if (!std::filesystem::exists(p)) continue;
    std::ofstream os(manifest_path(p), std::ios::binary | std::ios::trunc);
    os << manifest.dump(2) << '\n';
  }
}

}  // namespace rrtf::cli
