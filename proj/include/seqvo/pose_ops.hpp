#pragma once

#include "seqvo/autodiff.hpp"

// Differentiable counterparts of the geometry functions, batched along the
// first axis. Poses are [B x 6] rows (rx, ry, rz, tx, ty, tz); transforms
// are [B x 4 x 4].
namespace seqvo::geometry {

ad::Var pose_to_matrix(ad::Var poses);
ad::Var matrix_to_pose(ad::Var transforms);
// (R, t) -> (R^T, -R^T t)
ad::Var rigid_inverse(ad::Var transforms);
// a[i] * b[i]
ad::Var compose(ad::Var a, ad::Var b);

}  // namespace seqvo::geometry
