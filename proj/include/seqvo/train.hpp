#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "seqvo/checkpoint.hpp"
#include "seqvo/config.hpp"
#include "seqvo/dataio.hpp"

namespace seqvo::train {

struct TrainState {
  net::ParamStore params;
  optim::AdamState adam;
  std::uint64_t step = 0;  // completed steps
};

TrainState init_state(const Config& config);
Checkpoint to_checkpoint(const TrainState& state, const Config& config);
TrainState from_checkpoint(Checkpoint ckpt);

// Batch for a given step, a pure function of (config.train.seed, step):
// random sequences and start frames, then per-snippet augmentation. The
// datasets must already match the network input size.
std::vector<data::Snippet> sample_batch(const std::vector<data::SequenceDataset>& datasets, const Config& config,
                                        std::uint64_t step);

// One generator (Adam) update followed, when lambda_g > 0, by one
// discriminator (SGD) update. Throws NumericalError naming a non-finite
// loss term or gradient before any parameter changes.
loss::LossReport train_step(TrainState& state, const Config& config, const std::vector<data::Snippet>& batch);

struct RunOptions {
  // Log CSV and checkpoints go here when non-empty.
  std::filesystem::path out_dir;
  // Train until this many steps are complete; 0 means config.train.iterations.
  std::uint64_t until_step = 0;
  std::function<void(std::uint64_t step, const loss::LossReport&)> on_step;
};

inline constexpr const char* kLogName = "train_log.csv";
inline constexpr const char* kLastCheckpoint = "last.ckpt";

// Runs the loop from state.step. Datasets are resized to the network input.
// The log is appended to when resuming (state.step > 0).
TrainState run(const Config& config, const std::vector<data::SequenceDataset>& datasets, TrainState state,
               const RunOptions& options = {});

}  // namespace seqvo::train
