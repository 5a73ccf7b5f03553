#pragma once

#include "seqvo/tensor.hpp"

namespace seqvo {

// Per-pixel displacement (u, v) in pixels, stored H x W x 2 interleaved,
// plus an H x W validity mask in {0, 1}. For frame t the displacement
// points from a pixel of frame t to its location in frame t-1.
struct FlowField {
  Tensor uv;
  Tensor valid;

  std::size_t height() const { return uv.dim(0); }
  std::size_t width() const { return uv.dim(1); }

  static FlowField zeros(std::size_t height, std::size_t width);
  // 2 x H x W channel-first copy (network input layout).
  Tensor to_chw() const;
  // Bilinear resize; displacements are rescaled by the per-axis ratio.
  FlowField resized(std::size_t height, std::size_t width) const;
};

}  // namespace seqvo
