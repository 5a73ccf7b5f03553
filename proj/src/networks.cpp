#include "seqvo/networks.hpp"

#include <cmath>
#include <optional>
#include <random>

#include "seqvo/errors.hpp"
#include "seqvo/ops.hpp"

namespace seqvo::net {

using ad::Var;

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.input_h = 32;
  c.input_w = 104;
  c.base_channels = 8;
  return c;
}

void NetworkConfig::validate() const {
  if (input_h == 0 || input_w == 0) throw ConfigError("input size must be positive");
  if (base_channels == 0 || code_dim == 0 || lstm_hidden == 0) throw ConfigError("channel counts must be positive");
  if (encoder_levels < 1) throw ConfigError("encoder_levels must be at least 1");
  if (num_scales < 1 || num_scales > encoder_levels) {
    throw ConfigError("num_scales must lie in [1, encoder_levels]");
  }
}

std::size_t NetworkConfig::encoder_channels(std::size_t level) const {
  return base_channels << std::min<std::size_t>(level, 2);
}

std::pair<std::size_t, std::size_t> NetworkConfig::level_size(std::size_t levels) const {
  std::size_t h = input_h, w = input_w;
  for (std::size_t i = 0; i < levels; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return {h, w};
}

bool operator==(const NetworkConfig& a, const NetworkConfig& b) {
  return a.input_h == b.input_h && a.input_w == b.input_w && a.base_channels == b.base_channels &&
         a.code_dim == b.code_dim && a.num_scales == b.num_scales && a.lstm_hidden == b.lstm_hidden &&
         a.encoder_levels == b.encoder_levels;
}

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("parameter registered twice: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

bool is_discriminator_param(const std::string& name) { return name.rfind(kDiscPrefix, 0) == 0; }

Bound::Bound(ad::Tape& tape, const ParamStore& store, const std::function<bool(const std::string&)>& trainable)
    : tape_(&tape), store_(&store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    vars_.emplace(store.name(i), tape.leaf(store.value(i), trainable(store.name(i))));
  }
}

Bound::Bound(const ParamStore& store, std::span<const Var> vars) : tape_(nullptr), store_(&store) {
  if (vars.size() != store.size() || vars.empty()) throw ShapeError("Bound: one variable per parameter required");
  tape_ = &vars.front().tape();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (vars[i].shape() != store.value(i).shape()) throw ShapeError("Bound: shape mismatch for " + store.name(i));
    vars_.emplace(store.name(i), vars[i]);
  }
}

Var Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

namespace {

// Layer plans shared by init and forward so names and shapes cannot drift.

std::vector<std::size_t> encoder_plan(const NetworkConfig& c, std::size_t last_channels = 0) {
  std::vector<std::size_t> ch;
  for (std::size_t l = 0; l < c.encoder_levels; ++l) ch.push_back(c.encoder_channels(l));
  if (last_channels != 0) ch.back() = last_channels;
  return ch;
}

std::size_t decoder_channels(const NetworkConfig& c, std::size_t r) {
  return r == 0 ? c.base_channels : c.encoder_channels(r - 1);
}

class Initializer {
 public:
  Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void uniform(const std::string& name, Shape shape, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      v = static_cast<double>(static_cast<float>((2.0 * u - 1.0) * bound));
    }
    store_.add(name, std::move(t));
  }
  void constant(const std::string& name, Shape shape, double value) { store_.add(name, Tensor(std::move(shape), value)); }

  // Weight followed by ReLU.
  void relu_weight(const std::string& name, Shape shape, double fan_in) { uniform(name, std::move(shape), std::sqrt(6.0 / fan_in)); }
  // Weight followed by a saturating or linear output.
  void linear_weight(const std::string& name, Shape shape, double fan_in) {
    uniform(name, std::move(shape), std::sqrt(3.0 / fan_in));
  }
  void affine(const std::string& prefix, std::size_t channels) {
    constant(prefix + ".gain", {1, channels, 1, 1}, 1.0);
    constant(prefix + ".bias", {1, channels, 1, 1}, 0.0);
  }

 private:
  ParamStore& store_;
  std::mt19937_64 rng_;
};

void init_encoder(Initializer& in, const std::string& prefix, std::size_t in_channels,
                  const std::vector<std::size_t>& channels) {
  std::size_t cin = in_channels;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    const std::string name = prefix + "enc" + std::to_string(l);
    in.relu_weight(name + ".w", {channels[l], cin, 3, 3}, static_cast<double>(cin * 9));
    in.affine(name, channels[l]);
    cin = channels[l];
  }
}

void init_decoder(Initializer& in, const NetworkConfig& c, const std::string& prefix, std::size_t bottleneck) {
  std::size_t cin = bottleneck;
  for (std::size_t r = c.encoder_levels; r-- > 0;) {
    const std::size_t out = decoder_channels(c, r);
    const std::string up = prefix + "up" + std::to_string(r);
    // Each output pixel of a k2 s2 transpose convolution sees one input tap.
    in.relu_weight(up + ".w", {cin, out, 2, 2}, static_cast<double>(cin));
    in.affine(up, out);
    const std::size_t skip = r >= 1 ? c.encoder_channels(r - 1) : 0;
    const std::string iconv = prefix + "iconv" + std::to_string(r);
    in.relu_weight(iconv + ".w", {out, out + skip, 3, 3}, static_cast<double>((out + skip) * 9));
    in.affine(iconv, out);
    if (r < c.num_scales) {
      const std::string head = prefix + "head" + std::to_string(r);
      in.linear_weight(head + ".w", {1, out, 3, 3}, static_cast<double>(out * 9));
      in.constant(head + ".b", {1}, 0.0);
    }
    cin = out;
  }
}

Var affine_relu(const Bound& p, const std::string& name, Var x) {
  return ad::relu(x * p[name + ".gain"] + p[name + ".bias"]);
}

std::vector<Var> run_encoder(const Bound& p, const std::string& prefix, std::size_t levels, Var x) {
  std::vector<Var> feats;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string name = prefix + "enc" + std::to_string(l);
    x = affine_relu(p, name, ad::conv2d(x, p[name + ".w"], std::nullopt, 2, 1));
    feats.push_back(x);
  }
  return feats;
}

Var crop_to(Var x, std::size_t h, std::size_t w) {
  if (x.shape()[2] != h) x = ad::narrow(x, 2, 0, h);
  if (x.shape()[3] != w) x = ad::narrow(x, 3, 0, w);
  return x;
}

// Returns the per-scale head outputs (pre-sigmoid), coarse to fine.
std::vector<Var> run_decoder(const Bound& p, const NetworkConfig& c, const std::string& prefix, Var x,
                             const std::vector<Var>& feats) {
  std::vector<Var> heads;
  for (std::size_t r = c.encoder_levels; r-- > 0;) {
    const std::string up = prefix + "up" + std::to_string(r);
    x = affine_relu(p, up, ad::conv_transpose2d(x, p[up + ".w"], std::nullopt, 2, 0));
    const auto [h, w] = c.level_size(r);
    x = crop_to(x, h, w);
    if (r >= 1) x = ad::concat({x, feats[r - 1]}, 1);
    const std::string iconv = prefix + "iconv" + std::to_string(r);
    x = affine_relu(p, iconv, ad::conv2d(x, p[iconv + ".w"], std::nullopt, 1, 1));
    if (r < c.num_scales) {
      const std::string head = prefix + "head" + std::to_string(r);
      heads.push_back(ad::conv2d(x, p[head + ".w"], p[head + ".b"], 1, 1));
    }
  }
  return heads;
}

Var linear(const Bound& p, const std::string& name, Var x) { return ad::matmul(x, p[name + ".w"]) + p[name + ".b"]; }

void check_input(Var x, std::size_t channels, const NetworkConfig& c, const char* what) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != c.input_h || s[3] != c.input_w) {
    throw ShapeError(std::string(what) + ": expected B x " + std::to_string(channels) + " x " +
                     std::to_string(c.input_h) + " x " + std::to_string(c.input_w) + ", got " + to_string(s));
  }
}

}  // namespace

ParamStore init_params(const NetworkConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore store(seed);
  Initializer in(store, seed);
  const auto enc = encoder_plan(c);
  const std::size_t bottleneck = enc.back();

  init_encoder(in, kFlowPrefix, 2, encoder_plan(c, c.code_dim));

  const std::size_t h = c.lstm_hidden, d = c.code_dim;
  in.linear_weight(std::string(kLstmPrefix) + "wx", {d, 4 * h}, static_cast<double>(d));
  in.linear_weight(std::string(kLstmPrefix) + "wh", {h, 4 * h}, static_cast<double>(h));
  in.constant(std::string(kLstmPrefix) + "b", {1, 4 * h}, 0.0);
  in.linear_weight(std::string(kLstmPrefix) + "wp", {h, d}, static_cast<double>(h));
  in.constant(std::string(kLstmPrefix) + "bp", {1, d}, 0.0);

  init_encoder(in, kDepthPrefix, 3, enc);
  const std::string fuse = std::string(kDepthPrefix) + "fuse";
  in.relu_weight(fuse + ".w", {bottleneck, bottleneck + d, 1, 1}, static_cast<double>(bottleneck + d));
  in.affine(fuse, bottleneck);
  init_decoder(in, c, kDepthPrefix, bottleneck);

  init_encoder(in, kPosePrefix, 8, enc);
  for (const char* head : {"rot", "trans"}) {
    const std::string name = std::string(kPosePrefix) + head;
    in.linear_weight(name + ".w", {bottleneck, 3}, static_cast<double>(bottleneck));
    in.constant(name + ".b", {1, 3}, 0.0);
  }
  init_decoder(in, c, kPosePrefix, bottleneck);

  init_encoder(in, kDiscPrefix, 6, enc);
  in.linear_weight(std::string(kDiscPrefix) + "fc.w", {bottleneck, 1}, static_cast<double>(bottleneck));
  in.constant(std::string(kDiscPrefix) + "fc.b", {1, 1}, 0.0);
  return store;
}

std::size_t count_params(const ParamStore& store) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < store.size(); ++i) n += store.value(i).size();
  return n;
}

Var flow_encoder(const Bound& p, const NetworkConfig& c, Var flow) {
  check_input(flow, 2, c, "flow_encoder");
  auto feats = run_encoder(p, kFlowPrefix, c.encoder_levels, flow);
  return ad::global_avg_pool(feats.back());
}

LstmState lstm_zero_state(ad::Tape& tape, const NetworkConfig& c, std::size_t batch) {
  return {tape.constant(Tensor({batch, c.lstm_hidden})), tape.constant(Tensor({batch, c.lstm_hidden}))};
}

LstmOutput lstm_step(const Bound& p, const NetworkConfig& c, Var code, const LstmState& state) {
  const std::string pre = kLstmPrefix;
  const std::size_t h = c.lstm_hidden;
  Var z = ad::matmul(code, p[pre + "wx"]) + ad::matmul(state.h, p[pre + "wh"]) + p[pre + "b"];
  Var i = ad::sigmoid(ad::narrow(z, 1, 0, h));
  Var f = ad::sigmoid(ad::narrow(z, 1, h, h));
  Var g = ad::tanh(ad::narrow(z, 1, 2 * h, h));
  Var o = ad::sigmoid(ad::narrow(z, 1, 3 * h, h));
  Var cell = f * state.cell + i * g;
  Var hidden = o * ad::tanh(cell);
  Var refined = ad::matmul(hidden, p[pre + "wp"]) + p[pre + "bp"];
  return {refined, {hidden, cell}};
}

Var sigmoid_to_depth(Var s) { return ad::pow_const(ad::add_scalar(ad::scale(s, 10.0), 0.01), -1.0); }

std::vector<Var> depthnet(const Bound& p, const NetworkConfig& c, Var image, Var code) {
  check_input(image, 3, c, "depthnet");
  const Shape& cs = code.shape();
  if (cs.size() != 2 || cs[0] != image.shape()[0] || cs[1] != c.code_dim) {
    throw ShapeError("depthnet: code must be B x " + std::to_string(c.code_dim) + ", got " + to_string(cs));
  }
  auto feats = run_encoder(p, kDepthPrefix, c.encoder_levels, image);
  Var bottom = feats.back();
  const Shape& bs = bottom.shape();
  Var spread = ad::expand(ad::reshape(code, {cs[0], cs[1], 1, 1}), {cs[0], cs[1], bs[2], bs[3]});
  const std::string fuse = std::string(kDepthPrefix) + "fuse";
  Var x = affine_relu(p, fuse, ad::conv2d(ad::concat({bottom, spread}, 1), p[fuse + ".w"], std::nullopt, 1, 0));
  std::vector<Var> depths;
  for (Var head : run_decoder(p, c, kDepthPrefix, x, feats)) depths.push_back(sigmoid_to_depth(ad::sigmoid(head)));
  return depths;
}

Var make_rgbd(Var image, Var depth) {
  Var norm = depth / ad::mean(depth, {1, 2, 3}, true);
  return ad::concat({image, norm}, 1);
}

PoseMaskOutput posemask(const Bound& p, const NetworkConfig& c, Var rgbd_a, Var rgbd_b, bool with_masks) {
  check_input(rgbd_a, 4, c, "posemask");
  check_input(rgbd_b, 4, c, "posemask");
  auto feats = run_encoder(p, kPosePrefix, c.encoder_levels, ad::concat({rgbd_a, rgbd_b}, 1));
  Var pooled = ad::global_avg_pool(feats.back());
  const std::string pre = kPosePrefix;
  Var rot = ad::scale(linear(p, pre + "rot", pooled), 0.01);
  Var trans = ad::scale(linear(p, pre + "trans", pooled), 0.01);
  PoseMaskOutput out{ad::concat({rot, trans}, 1), {}};
  if (with_masks) {
    for (Var head : run_decoder(p, c, kPosePrefix, feats.back(), feats)) out.masks.push_back(ad::sigmoid(head));
  }
  return out;
}

Var discriminator(const Bound& p, const NetworkConfig& c, Var candidate, Var condition) {
  check_input(candidate, 3, c, "discriminator");
  check_input(condition, 3, c, "discriminator");
  auto feats = run_encoder(p, kDiscPrefix, c.encoder_levels, ad::concat({candidate, condition}, 1));
  return ad::sigmoid(linear(p, std::string(kDiscPrefix) + "fc", ad::global_avg_pool(feats.back())));
}

}  // namespace seqvo::net
