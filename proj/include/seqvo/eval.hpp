#pragma once

#include <optional>
#include <span>
#include <vector>

#include "seqvo/geometry.hpp"

namespace seqvo::eval {

struct DepthMetrics {
  double abs_rel = 0.0, sq_rel = 0.0, rmse = 0.0, rmse_log = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  std::size_t pixels = 0;
};

// Pixel rectangle [row0, row1) x [col0, col1) in ground-truth coordinates.
struct Crop {
  std::size_t row0, row1, col0, col1;
};

inline constexpr double kMinGtDepth = 1e-3;

// pred and gt are H x W; pred is bilinearly resized to the gt size first.
// Throws when no pixel survives the masks.
DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, double cap, bool median_scale,
                           std::optional<Crop> crop = std::nullopt);

struct AteResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_snippet;
  std::vector<double> scales;
  // Snippets whose predicted translations were all zero (scale fixed to 0).
  std::size_t degenerate = 0;
};

// T_0 = I, T_i = T_{i-1} * pose_to_transform(rel_i)^-1 for network-direction
// relative poses.
std::vector<geometry::Transform> accumulate(std::span<const geometry::Pose6> rel);

// Per window of `snippet_len` frames: positions of the accumulated
// predictions and of the ground truth, both relative to the window's first
// frame, a least-squares scale s = max(0, sum <p, g> / sum |p|^2), and the
// RMSE of s p - g. pred_rel[i] relates frames i and i+1.
AteResult snippet_ate(std::span<const geometry::Pose6> pred_rel, std::span<const geometry::Transform> gt_poses,
                      std::size_t snippet_len = 5);

}  // namespace seqvo::eval
