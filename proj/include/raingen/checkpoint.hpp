#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "raingen/models.hpp"

namespace raingen::harness {

// Binary checkpoint layout (all integers little-endian):
//   magic "TPSN"
//   u32 format version (currently 1)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims...,
//               float32 payload (little-endian, row-major)
//   u64 trailing config digest
// Training math is 64-bit; 32-bit storage exists only in this codec, so
// save -> load -> save is byte-identical.
void save_checkpoint(const std::filesystem::path& path, const models::Models& m,
                     uint64_t config_digest);

struct LoadedCheckpoint {
  models::Models models;
  uint64_t config_digest = 0;
  uint32_t version = 0;
};

// Loads and re-validates shapes against the given dims/taps. When
// expected_digest is set, a mismatch (config drift) is an error.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const models::ModelDims& dims,
                                 const models::EncoderTaps& taps,
                                 std::optional<uint64_t> expected_digest);

}  // namespace raingen::harness
