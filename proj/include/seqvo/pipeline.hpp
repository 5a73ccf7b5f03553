#pragma once

#include <vector>

#include "seqvo/config.hpp"
#include "seqvo/dataio.hpp"

namespace seqvo::pipeline {

// Stacked network inputs of a batch of equal-length snippets. Frames are
// frame-major: row t * B + b holds frame t of snippet b.
struct BatchTensors {
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor images;  // L B x 3 x H x W
  Tensor flows;   // L B x 2 x H x W
  std::vector<geometry::Intrinsics> intrinsics;  // per snippet
};

BatchTensors stack(const std::vector<data::Snippet>& batch, const net::NetworkConfig& config);

struct GeneratorOutput {
  ad::Var total;
  loss::LossReport report;    // every term except d_adv
  ad::Var pose;               // (L-1) B x 6 one-step poses, row (t-1) B + b for pair (t-1, t)
  std::vector<ad::Var> depths;  // per scale, L B x 1 x h x w
  Tensor fake;                // finest warped targets, (L-1) B x 3 x H x W
  Tensor target;              // the matching real targets
};

// Full differentiable forward of one training step on `p`'s tape: codes,
// LSTM unroll, depths, poses and masks, warps, and the weighted total.
GeneratorOutput generator_forward(const net::Bound& p, const Config& config, const BatchTensors& batch);

// Discriminator loss on (target | target) as real and (fake | target) as
// fake, evaluated on a fresh tape. Returns the loss before the update and
// applies one SGD step with d_lr to the discriminator parameters.
double discriminator_step(net::ParamStore& params, const Config& config, const Tensor& target, const Tensor& fake);

// Discriminator-only loss value without updating (for diagnostics).
struct DiscriminatorScores {
  double d_loss;
  double mean_real;
  double mean_fake;
};
DiscriminatorScores discriminator_scores(const net::ParamStore& params, const Config& config, const Tensor& target,
                                         const Tensor& fake);

struct SnippetPrediction {
  std::vector<Tensor> depths;           // finest scale, H x W per frame
  std::vector<geometry::Pose6> poses;   // pair (t, t+1), network direction
};

// Evaluation-only forward of one snippet.
SnippetPrediction predict_snippet(const net::ParamStore& params, const Config& config, const data::Snippet& snippet);

// Whole sequence in consecutive snippets of config.train.snippet_len frames
// overlapping by one frame, so every consecutive pair is predicted once.
SnippetPrediction predict_sequence(const net::ParamStore& params, const Config& config,
                                   const data::SequenceDataset& dataset);

}  // namespace seqvo::pipeline
