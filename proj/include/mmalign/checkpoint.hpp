#pragma once

// Checkpoint container, version 1. Layout (all integers little-endian):
//
//   8 bytes   magic "MMALIGN1"
//   u32       format version
//   u64       manifest length N
//   N bytes   JSON manifest: model config, seed, hyperparameters and a block
//             table [{name, group, rows, cols, offset}] where offset counts
//             f64 values from the start of the data section
//   ...       data section: every block as raw little-endian IEEE-754 f64,
//             row-major, in table order
//
// Loading reproduces parameter values bit for bit.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mmalign/model.hpp"

namespace mmalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, ModelParams& model, std::uint64_t seed,
                     const nlohmann::json& hyperparameters = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelParams model;
  std::uint64_t seed = 0;
  nlohmann::json hyperparameters;
  nlohmann::json manifest;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string file_digest(const std::filesystem::path& path);
/// Digest over the raw bytes of every parameter value, in list order.
std::string params_digest(const ParamList& params);

}  // namespace mmalign
