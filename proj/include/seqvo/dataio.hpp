#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqvo/flow.hpp"
#include "seqvo/geometry.hpp"

namespace seqvo::data {

struct SequenceDataset {
  std::string id;
  std::vector<Tensor> frames;  // 3 x H x W on [0, 1]
  geometry::Intrinsics intrinsics;
  std::optional<std::vector<geometry::Transform>> gt_poses;  // camera-to-world
  std::optional<std::vector<Tensor>> gt_depths;              // H x W meters, 0 = missing
  flow::FlowSource flow_source;

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.at(0).dim(1); }
  std::size_t width() const { return frames.at(0).dim(2); }
  // Throws when frame sizes differ or ground-truth lists have the wrong length.
  void validate() const;
};

// KITTI odometry pose file: one row-major 3 x 4 [R | t] per line.
std::vector<geometry::Transform> parse_poses(const std::string& text, const std::string& source = "<string>");
std::vector<geometry::Transform> load_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, std::span<const geometry::Transform> poses);

// "fx fy cx cy" on one line; width and height are left at 0 until an image
// size is known.
geometry::Intrinsics parse_intrinsics(const std::string& text, const std::string& source = "<string>");
geometry::Intrinsics load_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const geometry::Intrinsics& k);

std::string frame_name(std::size_t frame);

// Layout under root:
//   sequences/<id>/image/<frame:06>.png|ppm
//   sequences/<id>/calib.txt
//   sequences/<id>/depth/<frame:06>.pgm   (optional)
//   poses/<id>.txt                        (optional)
//   flow/<id>/<frame:06>.flo              (optional)
// Without flow files, ground-truth depth and poses back a synthetic flow
// source.
SequenceDataset load_sequence(const std::filesystem::path& root, const std::string& id);
void write_sequence(const std::filesystem::path& root, const SequenceDataset& dataset, bool with_flow = true);

// Camera motion between consecutive frames: T_i^-1 T_{i+1}.
std::vector<geometry::Transform> relative_motion(std::span<const geometry::Transform> poses);
// Poses in the network direction (frame i into frame i+1), i.e. the
// inverse of relative_motion.
std::vector<geometry::Pose6> network_poses(std::span<const geometry::Transform> poses);

// Frames bilinearly resized to (height, width) with matching intrinsics.
// Ground truth and the flow source are left at their native resolution.
SequenceDataset resized(const SequenceDataset& dataset, std::size_t height, std::size_t width);

// Training window of consecutive frames.
struct Snippet {
  std::vector<Tensor> images;      // 3 x H x W
  std::vector<FlowField> flows;    // flows[0] is zero, flows[t] is (t-1) -> t
  geometry::Intrinsics intrinsics;
  std::vector<Tensor> depths;      // ground truth when available, else empty
  std::vector<geometry::Transform> poses;  // ground truth when available, else empty

  std::size_t length() const { return images.size(); }
};

// Frames [start, start + length) with flows resized to the image size.
Snippet make_snippet(const SequenceDataset& dataset, std::size_t start, std::size_t length);

}  // namespace seqvo::data
