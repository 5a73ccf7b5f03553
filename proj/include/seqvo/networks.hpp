#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqvo/autodiff.hpp"

namespace seqvo::net {

struct NetworkConfig {
  std::size_t input_h = 128;
  std::size_t input_w = 416;
  std::size_t base_channels = 32;
  std::size_t code_dim = 128;
  std::size_t num_scales = 4;
  std::size_t lstm_hidden = 128;
  std::size_t encoder_levels = 6;

  static NetworkConfig full() { return {}; }
  static NetworkConfig desk();

  void validate() const;
  // Output channels of encoder level l (0-based).
  std::size_t encoder_channels(std::size_t level) const;
  // Spatial size after `levels` stride-2 convolutions (ceil halving).
  std::pair<std::size_t, std::size_t> level_size(std::size_t levels) const;
};

bool operator==(const NetworkConfig& a, const NetworkConfig& b);

// Named parameters in registration order.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& value(std::size_t i) { return entries_[i].second; }
  const Tensor& value(std::size_t i) const { return entries_[i].second; }

  std::uint64_t seed() const noexcept { return seed_; }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.seed_ == b.seed_ && a.entries_ == b.entries_;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Sub-network name prefixes.
inline constexpr const char* kFlowPrefix = "flow.";
inline constexpr const char* kLstmPrefix = "lstm.";
inline constexpr const char* kDepthPrefix = "depth.";
inline constexpr const char* kPosePrefix = "pose.";
inline constexpr const char* kDiscPrefix = "disc.";

bool is_discriminator_param(const std::string& name);

// Parameters placed on a tape.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamStore& store, const std::function<bool(const std::string&)>& trainable);
  // Uses existing variables, one per store entry in store order.
  Bound(const ParamStore& store, std::span<const ad::Var> vars);

  ad::Var operator[](const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  const ParamStore& store() const { return *store_; }

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::unordered_map<std::string, ad::Var> vars_;
};

ParamStore init_params(const NetworkConfig& config, std::uint64_t seed);
std::size_t count_params(const ParamStore& store);

// flow B x 2 x H x W -> code B x code_dim
ad::Var flow_encoder(const Bound& p, const NetworkConfig& config, ad::Var flow);

struct LstmState {
  ad::Var h;     // B x lstm_hidden
  ad::Var cell;  // B x lstm_hidden
};

LstmState lstm_zero_state(ad::Tape& tape, const NetworkConfig& config, std::size_t batch);

struct LstmOutput {
  ad::Var code;  // refined code, B x code_dim
  LstmState state;
};

LstmOutput lstm_step(const Bound& p, const NetworkConfig& config, ad::Var code, const LstmState& state);

// image B x 3 x H x W, code B x code_dim -> num_scales depth maps
// B x 1 x h_s x w_s, coarse to fine, each in (0.0999, 100).
std::vector<ad::Var> depthnet(const Bound& p, const NetworkConfig& config, ad::Var image, ad::Var code);

// Maps a sigmoid output to depth 1 / (10 s + 0.01).
ad::Var sigmoid_to_depth(ad::Var s);

// Stacks image B x 3 x H x W and depth B x 1 x H x W into B x 4 x H x W
// with the depth channel divided by its per-sample mean.
ad::Var make_rgbd(ad::Var image, ad::Var depth);

struct PoseMaskOutput {
  ad::Var pose;                // B x 6, (rx, ry, rz, tx, ty, tz) mapping frame a into frame b
  std::vector<ad::Var> masks;  // coarse to fine, empty when masks are not requested
};

PoseMaskOutput posemask(const Bound& p, const NetworkConfig& config, ad::Var rgbd_a, ad::Var rgbd_b,
                        bool with_masks = true);

// candidate, condition B x 3 x H x W -> B x 1 probability
ad::Var discriminator(const Bound& p, const NetworkConfig& config, ad::Var candidate, ad::Var condition);

}  // namespace seqvo::net
