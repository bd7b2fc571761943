/**
 * @file checkpoint.hpp
 * @brief Parameter checkpoints: `<stem>.json` manifest + `<stem>.bin` blob.
 *
 * The manifest carries the architecture config (opaque JSON supplied by the
 * caller) and the parameter list {name, shape} in ParameterSet order. The blob
 * is every parameter's row-major values as little-endian IEEE-754 doubles,
 * concatenated in manifest order.
 */
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "covarcast/nn/layers.hpp"

namespace covarcast::nn {

inline constexpr const char* kCheckpointFormat = "covarcast-checkpoint-v1";

namespace detail {

inline void write_le_double(std::ostream& out, double v) {
  unsigned char bytes[sizeof(double)];
  std::memcpy(bytes, &v, sizeof(double));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(double));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(double));
}

inline double read_le_double(std::istream& in) {
  unsigned char bytes[sizeof(double)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(double))) {
    throw ValidationError("checkpoint blob is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(double));
  double v = 0.0;
  std::memcpy(&v, bytes, sizeof(double));
  return v;
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".json");
}
inline std::filesystem::path blob_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".bin");
}

inline void write_checkpoint(const std::filesystem::path& stem, const nlohmann::json& architecture,
                             const ParameterSet& params, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["architecture"] = architecture;
  manifest["blob"] = blob_path(stem).filename().string();
  manifest["parameters"] = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    manifest["parameters"].push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  }
  for (const auto& [key, value] : extra.items()) manifest[key] = value;

  std::ofstream blob(blob_path(stem), std::ios::binary);
  if (!blob) throw ComputationError("cannot write checkpoint blob " + blob_path(stem).string());
  for (const auto& [name, t] : params) {
    for (Eigen::Index i = 0; i < t.numel(); ++i) detail::write_le_double(blob, t.value().data()[i]);
  }
  std::ofstream json_out(manifest_path(stem));
  if (!json_out) throw ComputationError("cannot write checkpoint manifest " + manifest_path(stem).string());
  json_out << manifest.dump(2) << '\n';
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& stem) {
  std::ifstream in(manifest_path(stem));
  if (!in) throw ValidationError("cannot open checkpoint manifest " + manifest_path(stem).string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw ValidationError("unknown checkpoint format");
  return manifest;
}

/// Loads values into `params`, which must match the manifest names and shapes.
inline void load_checkpoint_values(const std::filesystem::path& stem, const nlohmann::json& manifest,
                                   const ParameterSet& params) {
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size()) throw ValidationError("checkpoint parameter count does not match the model");
  std::ifstream blob(stem.parent_path() / manifest.at("blob").get<std::string>(), std::ios::binary);
  if (!blob) throw ValidationError("cannot open checkpoint blob for " + stem.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& entry = entries[i];
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (entry.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != t.rows() ||
        shape[1] != t.cols()) {
      throw ValidationError("checkpoint parameter '" + entry.at("name").get<std::string>() +
                            "' does not match model parameter '" + name + "'");
    }
    Matrix& value = t.mutable_value();
    for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = detail::read_le_double(blob);
  }
  if (blob.peek() != std::char_traits<char>::eof()) throw ValidationError("checkpoint blob has trailing bytes");
}

}  // namespace covarcast::nn
