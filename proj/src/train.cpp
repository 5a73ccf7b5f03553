#include "seqvo/train.hpp"

#include <fstream>
#include <random>

#include "seqvo/augment.hpp"
#include "seqvo/errors.hpp"
#include "seqvo/pipeline.hpp"

namespace seqvo::train {

namespace fs = std::filesystem;

TrainState init_state(const Config& config) {
  config.validate();
  TrainState s;
  s.params = net::init_params(config.network, config.train.seed);
  s.adam = optim::AdamState::zeros_like(s.params);
  return s;
}

Checkpoint to_checkpoint(const TrainState& state, const Config& config) {
  return {config, state.params, state.adam, state.step};
}

TrainState from_checkpoint(Checkpoint ckpt) {
  return {std::move(ckpt.params), std::move(ckpt.adam), ckpt.step};
}

std::vector<data::Snippet> sample_batch(const std::vector<data::SequenceDataset>& datasets, const Config& cfg,
                                        std::uint64_t step) {
  if (datasets.empty()) throw ShapeError("no training sequences");
  const std::size_t L = cfg.train.snippet_len;
  for (const auto& ds : datasets) {
    if (ds.size() < L) {
      throw ShapeError("sequence " + ds.id + " has " + std::to_string(ds.size()) + " frames, fewer than snippet_len " +
                       std::to_string(L));
    }
  }
  const std::uint64_t seed = cfg.train.seed;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<data::Snippet> batch;
  for (std::size_t b = 0; b < cfg.train.batch_size; ++b) {
    const auto& ds = datasets[rng() % datasets.size()];
    const std::size_t start = rng() % (ds.size() - L + 1);
    data::Snippet s = data::make_snippet(ds, start, L);
    if (cfg.train.augment) s = augment::apply(s, augment::draw(rng, cfg.train.augment_spec));
    batch.push_back(std::move(s));
  }
  return batch;
}

loss::LossReport train_step(TrainState& state, const Config& cfg, const std::vector<data::Snippet>& batch) {
  ad::Tape tape(ad::Precision::kFloat32);
  net::Bound p(tape, state.params, [](const std::string& n) { return !net::is_discriminator_param(n); });
  const auto bt = pipeline::stack(batch, cfg.network);
  auto out = pipeline::generator_forward(p, cfg, bt);
  tape.backward(out.total);
  optim::GradList grads(state.params.size());
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const auto& name = state.params.name(i);
    if (!net::is_discriminator_param(name)) grads[i] = tape.grad(p[name].id());
  }
  const double lr = optim::lr_at(state.step, cfg.train.lr0, cfg.train.lr_halve_every);
  optim::adam_step(state.params, grads, state.adam, lr, cfg.train.weight_decay, cfg.train.adam);
  loss::LossReport report = out.report;
  if (cfg.weights.lambda_g > 0.0) {
    report.d_adv = pipeline::discriminator_step(state.params, cfg, out.target, out.fake);
  }
  ++state.step;
  return report;
}

TrainState run(const Config& cfg, const std::vector<data::SequenceDataset>& datasets, TrainState state,
               const RunOptions& opts) {
  cfg.validate();
  std::vector<data::SequenceDataset> sized;
  for (const auto& ds : datasets) sized.push_back(data::resized(ds, cfg.network.input_h, cfg.network.input_w));
  const std::uint64_t until = opts.until_step ? opts.until_step : cfg.train.iterations;

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    const fs::path log_path = opts.out_dir / kLogName;
    const bool append = state.step > 0 && fs::exists(log_path);
    log.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path.string());
    if (!append) loss::write_csv_header(log);
  }
  while (state.step < until) {
    const auto batch = sample_batch(sized, cfg, state.step);
    const auto report = train_step(state, cfg, batch);
    if (log.is_open()) {
      loss::write_csv_row(log, state.step, report);
      log.flush();
    }
    if (opts.on_step) opts.on_step(state.step, report);
    if (!opts.out_dir.empty() && cfg.train.ckpt_every > 0 && state.step % cfg.train.ckpt_every == 0) {
      save_checkpoint(opts.out_dir / ("ckpt_" + data::frame_name(state.step) + ".ckpt"), to_checkpoint(state, cfg));
    }
  }
  if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir / kLastCheckpoint, to_checkpoint(state, cfg));
  return state;
}

}  // namespace seqvo::train
