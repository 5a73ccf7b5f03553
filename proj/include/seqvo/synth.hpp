#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqvo/dataio.hpp"

namespace seqvo::synth {

// Smooth camera trajectory. Frame i sits at
//   t = (sway sin(w i + a), bob sin(2 w i + b), forward i)
// with yaw(i) = yaw sin(w i + c) about the camera y axis, w = 2 pi / period
// and phases a, b, c drawn from the seed.
struct MotionSpec {
  double forward = 0.15;
  double sway = 0.25;
  double bob = 0.03;
  double yaw = 0.03;
  double period = 24.0;

  static MotionSpec identity() { return {0.0, 0.0, 0.0, 0.0, 24.0}; }
  // "default", "identity" or comma-separated key=value overrides of the
  // default, e.g. "forward=0.2,yaw=0".
  static MotionSpec parse(const std::string& text);
};

struct SceneOptions {
  std::size_t height = 32;
  std::size_t width = 104;
  double focal = 60.0;
  // World depths of the foreground planes; drawn from the seed when empty.
  std::vector<double> plane_depths;
};

// Textured fronto-parallel planes (2 to 4) in front of a textured
// background, rendered by ray casting through the shared projection code.
// Images are quantized to 8 bits; depths and poses are exact.
data::SequenceDataset synth_scene(std::uint64_t seed, std::size_t n_frames, const MotionSpec& motion,
                                  const SceneOptions& options = {});

}  // namespace seqvo::synth
