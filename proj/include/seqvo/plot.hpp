#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "seqvo/geometry.hpp"

namespace seqvo::plot {

struct Trajectories {
  std::vector<Eigen::Vector3d> pred;  // scale-aligned, relative to the first frame
  std::vector<Eigen::Vector3d> gt;    // relative to the first frame
  double scale = 0.0;
};

// Accumulates network-direction relative predictions and fits one global
// nonnegative scale to the ground-truth positions.
Trajectories align(std::span<const geometry::Pose6> pred_rel, std::span<const geometry::Transform> gt_poses);

// Top view (x right, z up the page) with one polyline per trajectory.
void write_svg(std::ostream& out, const Trajectories& t);
// frame,pred_x,pred_y,pred_z,gt_x,gt_y,gt_z
void write_csv(std::ostream& out, const Trajectories& t);

}  // namespace seqvo::plot
