#pragma once

#include <span>
#include <vector>

#include "seqvo/autodiff.hpp"
#include "seqvo/flow_field.hpp"
#include "seqvo/geometry.hpp"

namespace seqvo::view {

// Source coordinate written for pixels whose transformed point is not in
// front of the camera. Lies more than one pixel outside any image, so
// bilinear sampling returns exactly zero there.
inline constexpr double kInvalidCoord = -2.0;

struct Correspondence {
  Tensor coords;  // B x 2 x H x W, (u, v) in the source image
  Tensor valid;   // B x 1 x H x W
};

// Plain (non-differentiable) correspondence for depth B x 1 x H x W and one
// target-to-source transform per batch element.
Correspondence correspondence(const Tensor& depth, std::span<const geometry::Transform> target_to_source,
                              std::span<const geometry::Intrinsics> intrinsics);

struct WarpCoords {
  ad::Var coords;  // B x 2 x H x W
  Tensor valid;    // B x 1 x H x W
};

// Differentiable with respect to depth (B x 1 x H x W) and the transforms
// (B x 4 x 4). `intrinsics` holds one entry per batch element or a single
// shared entry.
WarpCoords correspondence(ad::Var depth, ad::Var target_to_source,
                          std::span<const geometry::Intrinsics> intrinsics);

// Bilinear sampling of src (B x C x H x W) at coords (B x 2 x H' x W') with
// zero padding. The cell containing a coordinate is [i, i+1).
ad::Var bilinear_sample(ad::Var src, ad::Var coords);
Tensor bilinear_sample(const Tensor& src, const Tensor& coords);

struct WarpResult {
  ad::Var image;   // synthesized target, B x C x H x W
  Tensor valid;    // B x 1 x H x W
  ad::Var coords;  // B x 2 x H x W
};

WarpResult synthesize(ad::Var src, ad::Var depth, ad::Var target_to_source,
                      std::span<const geometry::Intrinsics> intrinsics);

// Rigid flow of a single H x W depth map: coords(p) - p on valid pixels,
// zero elsewhere.
FlowField rigid_flow(const Tensor& depth, const geometry::Transform& target_to_source,
                     const geometry::Intrinsics& intrinsics);

}  // namespace seqvo::view
