#pragma once

#include <cstdint>
#include <filesystem>

#include "seqvo/config.hpp"
#include "seqvo/networks.hpp"
#include "seqvo/optim.hpp"

namespace seqvo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  net::ParamStore params;
  optim::AdamState adam;
  std::uint64_t step = 0;  // completed training steps
};

// Layout (little-endian): "SEQVOCKP", u32 version, u32 + config text,
// u64 init seed, u64 step, u64 Adam step, u32 parameter count, then per
// parameter: u32 + name, u32 rank, u32 dims, and float32 value, Adam m and
// Adam v blobs.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws VersionError on a bad magic or version, FormatError on truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqvo
