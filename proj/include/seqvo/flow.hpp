#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include "seqvo/flow_field.hpp"
#include "seqvo/geometry.hpp"

namespace seqvo::flow {

// Middlebury magic number, the bytes "PIEH" read as a little-endian float.
inline constexpr float kFloMagic = 202021.25f;
// Entries with a component above this magnitude are unknown flow.
inline constexpr float kFloUnknown = 1e9f;

// Invalid pixels are written as unknown (1e10) and read back as zero flow
// with valid = 0.
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// Directory holding <frame:06>.flo, where the file for frame t stores the
// (t-1) -> t flow.
struct FileFlowSource {
  std::filesystem::path dir;
};

// Ground-truth rigid flow from per-frame depth (H x W) and camera-to-world
// poses.
struct SyntheticFlowSource {
  std::vector<Tensor> depths;
  std::vector<geometry::Transform> poses;
  geometry::Intrinsics intrinsics;
};

using FlowSource = std::variant<FileFlowSource, SyntheticFlowSource>;

std::filesystem::path flo_path(const std::filesystem::path& dir, std::size_t frame);

// Flow of frame t (t >= 1): for each pixel of frame t its displacement to
// frame t-1.
FlowField flow_for(const FlowSource& source, std::size_t t);

}  // namespace seqvo::flow
