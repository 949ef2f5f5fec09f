#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   offset  field
//   0       magic "DTPPOCK1" (8 bytes)
//   8       u32 format version (currently 1)
//   12      u64 config hash
//   20      i64 optimizer step count
//   28      u32 metadata length M, then M bytes of UTF-8 JSON
//   ...     u32 parameter count P, then P records:
//             u16 name length, name bytes
//             u32 rank (always 2), u64 rows, u64 cols
//             f64[rows*cols] value, f64[rows*cols] Adam m, f64[rows*cols] Adam v

#include <cstdint>
#include <string>
#include <vector>

#include "dtppo/param_store.hpp"

namespace dtppo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ad::ParamStore params;
  std::uint64_t config_hash = 0;
  std::string metadata;  // JSON text
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
/// Throws CorruptFileError with the failing byte offset, or
/// Error(kFormatVersionMismatch).
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace dtppo
