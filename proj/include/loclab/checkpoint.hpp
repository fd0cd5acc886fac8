#pragma once

#include <filesystem>
#include <string>

#include "loclab/model.hpp"

namespace loclab {

// Single-file binary checkpoint: magic "LOCF", a one-byte format version,
// the model config as JSON, a tensor manifest (name, shape, byte offset),
// then all values as little-endian float32. Loading a checkpoint written by
// this build reproduces the parameters bit for bit.
inline constexpr char kCheckpointMagic[4] = {'L', 'O', 'C', 'F'};
inline constexpr uint8_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string file_hash_hex(const std::filesystem::path& path);

} // namespace loclab
