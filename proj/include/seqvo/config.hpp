#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "seqvo/augment.hpp"
#include "seqvo/losses.hpp"
#include "seqvo/networks.hpp"
#include "seqvo/optim.hpp"

namespace seqvo {

// Ground-truth depth caps of the depth benchmark, meters.
inline constexpr std::array<double, 2> kDepthCaps = {50.0, 80.0};

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t snippet_len = 15;
  std::size_t iterations = 100000;
  double lr0 = 1e-4;
  std::uint64_t lr_halve_every = 15000;
  double weight_decay = 3e-4;
  double d_lr = 1e-4;
  optim::AdamConfig adam;
  std::uint64_t seed = 0;
  bool use_code = true;
  bool use_lstm = true;
  bool augment = true;
  augment::AugmentSpec augment_spec;
  std::size_t ckpt_every = 0;
};

struct Config {
  net::NetworkConfig network;
  loss::LossWeights weights;
  TrainConfig train;

  // Published full-scale protocol.
  static Config full();
  // 32 x 104 inputs, 8 base channels, 9-frame snippets and a shorter,
  // faster schedule.
  static Config desk();

  void validate() const;
};

bool operator==(const Config& a, const Config& b);

// Flat "key = value" lines; '#' starts a comment. A "preset = desk|full"
// line selects the starting point (full when absent); the remaining keys
// override it. Unknown keys and malformed values throw ConfigError.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
// Every key, one per line, readable by parse_config.
std::string to_text(const Config& config);

}  // namespace seqvo
