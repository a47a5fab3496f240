// SPDX-License-Identifier: Apache-2.0
//
// Single-file model checkpoints:
//   "NALNCKPT"  8-byte magic
//   u32         format version, little-endian
//   u64         header length in bytes
//   header      JSON: format_version, per-stream config and parameter
//               manifest (name, shape, offset in values), data_bytes, data_crc32
//   data        little-endian float64 parameter values
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "normalign/models.hpp"

namespace normalign {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::string serialize_checkpoint(const std::vector<StreamModel>& streams);
std::vector<StreamModel> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::vector<StreamModel>& streams, const std::filesystem::path& file);
/// Throws VersionMismatchError, TruncatedFileError, ChecksumError or
/// ConsistencyError.
std::vector<StreamModel> load_checkpoint(const std::filesystem::path& file);

}  // namespace normalign
