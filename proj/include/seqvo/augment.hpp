#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "seqvo/dataio.hpp"

namespace seqvo::augment {

// Ranges of the per-snippet jitter.
struct AugmentSpec {
  double max_rotation_deg = 5.0;
  double min_zoom = 1.0;
  double max_zoom = 1.15;
  double min_gain = 0.8;
  double max_gain = 1.2;

  static AugmentSpec none() { return {0.0, 1.0, 1.0, 1.0, 1.0}; }
};

struct AugmentParams {
  double rotation = 0.0;  // radians, image rotation about the principal point
  double zoom = 1.0;
  std::array<double, 3> gain = {1.0, 1.0, 1.0};
};

AugmentParams draw(std::mt19937_64& rng, const AugmentSpec& spec);

// Output pixel p samples the input at c + R(-rotation) (p - c) / zoom, where
// c is the principal point. Images are bilinearly resampled (edge clamped)
// and scaled per channel, flows are resampled and rotated/scaled, depths use
// nearest neighbours, and fx, fy are multiplied by the zoom. With fx == fy
// the rotation is a camera roll, so ground-truth poses are conjugated by it.
data::Snippet apply(const data::Snippet& snippet, const AugmentParams& params);

// Roll of the augmented camera relative to the original one: maps original
// camera coordinates into augmented camera coordinates.
geometry::Transform camera_roll(const AugmentParams& params);

// Draws one parameter set per snippet from `seed`.
std::vector<data::Snippet> augment(const std::vector<data::Snippet>& batch, std::uint64_t seed,
                                   const AugmentSpec& spec = {});

}  // namespace seqvo::augment
