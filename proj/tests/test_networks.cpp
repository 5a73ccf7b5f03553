#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "seqvo/config.hpp"
#include "seqvo/errors.hpp"
#include "seqvo/gradcheck.hpp"
#include "seqvo/networks.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/pipeline.hpp"
#include "seqvo/synth.hpp"
#include "test_util.hpp"

using namespace seqvo;
using ad::Tape;
using ad::Var;
using net::NetworkConfig;
using seqvo::testing::Rng;

namespace {

net::Bound bind_all(Tape& tape, const net::ParamStore& store) {
  return net::Bound(tape, store, [](const std::string&) { return true; });
}

NetworkConfig tiny() {
  NetworkConfig c = NetworkConfig::desk();
  c.input_h = 16;
  c.input_w = 48;
  c.base_channels = 4;
  c.code_dim = 16;
  c.lstm_hidden = 16;
  return c;
}

}  // namespace

TEST(NetworkConfig, Presets) {
  const NetworkConfig full = NetworkConfig::full();
  EXPECT_EQ(full.input_h, 128u);
  EXPECT_EQ(full.input_w, 416u);
  EXPECT_EQ(full.code_dim, 128u);
  EXPECT_EQ(full.lstm_hidden, full.code_dim);
  EXPECT_EQ(full.num_scales, 4u);
  EXPECT_EQ(full.encoder_levels, 6u);
  const NetworkConfig desk = NetworkConfig::desk();
  EXPECT_EQ(desk.input_h, 32u);
  EXPECT_EQ(desk.input_w, 104u);
  EXPECT_EQ(desk.base_channels, 8u);
}

TEST(FlowEncoder, FullScaleCodeHas128Entries) {
  const NetworkConfig c = NetworkConfig::full();
  const auto params = net::init_params(c, 1);
  Tape tape;
  auto p = bind_all(tape, params);
  Rng rng(1);
  Var code = net::flow_encoder(p, c, tape.constant(rng.tensor({1, 2, 128, 416}, -2, 2)));
  EXPECT_EQ(code.shape(), (Shape{1, 128}));
}

TEST(FlowEncoder, ZeroFlowGivesZeroCode) {
  const NetworkConfig c = NetworkConfig::desk();
  const auto params = net::init_params(c, 2);
  Tape tape;
  auto p = bind_all(tape, params);
  Var code = net::flow_encoder(p, c, tape.constant(Tensor({2, 2, 32, 104})));
  for (double v : code.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(FlowEncoder, RowPermutationChangesCode) {
  const NetworkConfig c = NetworkConfig::desk();
  const auto params = net::init_params(c, 3);
  Rng rng(3);
  const Tensor flow = rng.tensor({1, 2, 32, 104}, -3, 3);
  Tensor permuted(flow.shape());
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t col = 0; col < 104; ++col) permuted.at({0, ch, r, col}) = flow.at({0, ch, (r * 7 + 3) % 32, col});
  Tape tape;
  auto p = bind_all(tape, params);
  const Tensor a = net::flow_encoder(p, c, tape.constant(flow)).value();
  const Tensor b = net::flow_encoder(p, c, tape.constant(permuted)).value();
  EXPECT_GT(max_abs_diff(a, b), 0.0);
}

TEST(Lstm, ZeroEverythingGivesZero) {
  const NetworkConfig c = tiny();
  auto params = net::init_params(c, 4);
  for (std::size_t i = 0; i < params.size(); ++i) params.value(i).fill(0.0);
  Tape tape;
  auto p = bind_all(tape, params);
  const auto out = net::lstm_step(p, c, tape.constant(Tensor({2, c.code_dim})), net::lstm_zero_state(tape, c, 2));
  for (double v : out.code.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : out.state.h.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : out.state.cell.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedGatesKeepTheCell) {
  const NetworkConfig c = tiny();
  auto params = net::init_params(c, 5);
  const std::size_t h = c.lstm_hidden;
  params.at("lstm.wx").fill(0.0);
  params.at("lstm.wh").fill(0.0);
  Tensor& b = params.at("lstm.b");
  for (std::size_t j = 0; j < h; ++j) {
    b[j] = -1e3;      // input gate closed
    b[h + j] = 1e3;   // forget gate open
  }
  Tape tape(ad::Precision::kFloat64);
  auto p = bind_all(tape, params);
  Rng rng(5);
  net::LstmState state{tape.constant(rng.tensor({1, h})), tape.constant(rng.tensor({1, h}))};
  const Tensor cell0 = state.cell.value();
  for (int step = 0; step < 5; ++step) {
    state = net::lstm_step(p, c, tape.constant(rng.tensor({1, c.code_dim}, -3, 3)), state).state;
    EXPECT_EQ(state.cell.value(), cell0);
  }
}

TEST(Lstm, GradientThroughFifteenSteps) {
  const NetworkConfig c = tiny();
  const auto params = net::init_params(c, 6);
  Rng rng(6);
  std::vector<Tensor> inputs;
  for (int s = 0; s < 15; ++s) inputs.push_back(rng.tensor({1, c.code_dim}, -1, 1));
  const auto r = ad::grad_check(
      [&](Tape& tape, std::span<const Var> in) {
        auto p = bind_all(tape, params);
        net::LstmState state = net::lstm_zero_state(tape, c, 1);
        Var out;
        for (std::size_t s = 0; s < 15; ++s) {
          auto o = net::lstm_step(p, c, s == 0 ? in[0] : tape.constant(inputs[s]), state);
          state = o.state;
          out = o.code;
        }
        return ad::sum_all(ad::tanh(out));
      },
      std::vector<Tensor>{inputs[0]});
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(DepthNet, ScalesAndRange) {
  const NetworkConfig c = NetworkConfig::desk();
  const auto params = net::init_params(c, 7);
  Tape tape;
  auto p = bind_all(tape, params);
  Rng rng(7);
  const auto depths =
      net::depthnet(p, c, tape.constant(rng.tensor({2, 3, 32, 104}, 0, 1)), tape.constant(rng.tensor({2, 128})));
  ASSERT_EQ(depths.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t f = std::size_t{8} >> s;
    EXPECT_EQ(depths[s].shape(), (Shape{2, 1, 32 / f, 104 / f}));
    for (double v : depths[s].value().data()) {
      EXPECT_GT(v, 0.0999);
      EXPECT_LT(v, 100.0);
    }
  }
}

TEST(DepthNet, BoundsHoldForExtremeParameters) {
  const NetworkConfig c = tiny();
  auto params = net::init_params(c, 8);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double& v : params.value(i).data()) v *= 50.0;
  Tape tape;
  auto p = bind_all(tape, params);
  Rng rng(8);
  for (const Var& d : net::depthnet(p, c, tape.constant(rng.tensor({1, 3, 16, 48}, 0, 1)),
                                    tape.constant(rng.tensor({1, c.code_dim}, -5, 5)))) {
    for (double v : d.value().data()) {
      EXPECT_GE(v, 0.0999);
      EXPECT_LE(v, 100.0);
    }
  }
  EXPECT_NEAR(net::sigmoid_to_depth(tape.constant(Tensor::scalar(0.0))).value().item(), 100.0, 1e-4);
}

TEST(DepthNet, CodeChangesDepth) {
  const NetworkConfig c = NetworkConfig::desk();
  const auto params = net::init_params(c, 9);
  Rng rng(9);
  const Tensor image = rng.tensor({1, 3, 32, 104}, 0, 1);
  Tensor code = rng.tensor({1, 128});
  auto mean_depth = [&](const Tensor& k) {
    Tape tape(ad::Precision::kFloat64);
    auto p = bind_all(tape, params);
    return ad::mean_all(net::depthnet(p, c, tape.constant(image), tape.constant(k)).back()).value().item();
  };
  const double base = mean_depth(code);
  code[0] += 1e-3;
  EXPECT_NE(mean_depth(code), base);
}

TEST(PoseMask, OutputsAndSmallInitialMotion) {
  const NetworkConfig c = NetworkConfig::desk();
  auto params = net::init_params(c, 10);
  Tape tape;
  auto p = bind_all(tape, params);
  Rng rng(10);
  const Tensor ia = rng.tensor({2, 3, 32, 104}, 0, 1), da = rng.tensor({2, 1, 32, 104}, 1, 9);
  const Tensor ib = rng.tensor({2, 3, 32, 104}, 0, 1), db = rng.tensor({2, 1, 32, 104}, 1, 9);
  Var a = net::make_rgbd(tape.constant(ia), tape.constant(da));
  Var b = net::make_rgbd(tape.constant(ib), tape.constant(db));
  const auto out = net::posemask(p, c, a, b);
  EXPECT_EQ(out.pose.shape(), (Shape{2, 6}));
  double largest = 0.0;
  for (double v : out.pose.value().data()) largest = std::max(largest, std::abs(v));
  EXPECT_GT(largest, 0.0);
  EXPECT_LT(largest, 0.05);
  {
    // The heads are linear in their weights, so zero weights give zero motion.
    for (const char* w : {"pose.rot.w", "pose.trans.w"}) params.at(w) = Tensor(params.at(w).shape());
    Tape t2;
    auto p2 = bind_all(t2, params);
    const auto still = net::posemask(p2, c, net::make_rgbd(t2.constant(ia), t2.constant(da)),
                                     net::make_rgbd(t2.constant(ib), t2.constant(db)), false);
    for (double v : still.pose.value().data()) EXPECT_EQ(v, 0.0);
  }
  ASSERT_EQ(out.masks.size(), 4u);
  for (const Var& m : out.masks)
    for (double v : m.value().data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  EXPECT_EQ(out.masks.back().shape(), (Shape{2, 1, 32, 104}));
}

TEST(PoseMask, RgbdNormalizesDepth) {
  Tape tape(ad::Precision::kFloat64);
  Rng rng(11);
  Var rgbd = net::make_rgbd(tape.constant(rng.tensor({2, 3, 4, 5}, 0, 1)), tape.constant(rng.tensor({2, 1, 4, 5}, 1, 9)));
  for (std::size_t b = 0; b < 2; ++b) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t col = 0; col < 5; ++col) mean += rgbd.value().at({b, 3, r, col});
    EXPECT_NEAR(mean / 20.0, 1.0, 1e-12);
  }
}

TEST(Discriminator, RangeAndZeroHead) {
  const NetworkConfig c = NetworkConfig::desk();
  auto params = net::init_params(c, 12);
  Rng rng(12);
  const Tensor x = rng.tensor({3, 3, 32, 104}, 0, 1), y = rng.tensor({3, 3, 32, 104}, 0, 1);
  {
    Tape tape;
    auto p = bind_all(tape, params);
    for (double v : net::discriminator(p, c, tape.constant(x), tape.constant(y)).value().data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  params.at("disc.fc.w").fill(0.0);
  params.at("disc.fc.b").fill(0.0);
  Tape tape;
  auto p = bind_all(tape, params);
  for (double v : net::discriminator(p, c, tape.constant(x), tape.constant(y)).value().data()) EXPECT_EQ(v, 0.5);
}

// Real pairs (I | I) against shuffled pairs (I' | I) after discriminator-only
// training.
TEST(Discriminator, SeparatesRealFromShuffled) {
  Config cfg = Config::desk();
  auto params = net::init_params(cfg.network, 13);
  const auto ds = synth::synth_scene(13, 12, synth::MotionSpec{});
  const std::size_t n = 4;
  Tensor target({n, 3, 32, 104}), fake({n, 3, 32, 104});
  const std::size_t chw = 3 * 32 * 104;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = ds.frames[i];
    const auto& b = ds.frames[(i + 6) % ds.size()];
    std::copy(a.data().begin(), a.data().end(), target.data().begin() + static_cast<std::ptrdiff_t>(i * chw));
    std::copy(b.data().begin(), b.data().end(), fake.data().begin() + static_cast<std::ptrdiff_t>(i * chw));
  }
  cfg.train.d_lr = 0.05;
  for (int step = 0; step < 200; ++step) pipeline::discriminator_step(params, cfg, target, fake);
  const auto s = pipeline::discriminator_scores(params, cfg, target, fake);
  EXPECT_GT(s.mean_real, s.mean_fake);
}

TEST(InitParams, DeterministicAndCompact) {
  const NetworkConfig c = NetworkConfig::desk();
  const auto a = net::init_params(c, 21);
  const auto b = net::init_params(c, 21);
  const auto d = net::init_params(c, 22);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == d);
  EXPECT_LT(net::count_params(a), 500000u);
  EXPECT_TRUE(a.contains("pose.rot.w"));
  for (const char* head : {"pose.rot.w", "pose.trans.w"}) {
    const Tensor& w = a.at(head);
    const double bound = std::sqrt(3.0 / static_cast<double>(w.dim(0)));
    for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  }
  for (double v : a.at("pose.trans.b").data()) EXPECT_EQ(v, 0.0);
  for (double v : a.at("depth.enc0.bias").data()) EXPECT_EQ(v, 0.0);
  // Every registered name is unique and the store keeps its order.
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(names.insert(a.name(i)).second);
  EXPECT_THROW(net::ParamStore().at("missing"), Error);
}

TEST(Forward, Deterministic) {
  const NetworkConfig c = tiny();
  const auto params = net::init_params(c, 23);
  Rng rng(23);
  const Tensor img = rng.tensor({1, 3, 16, 48}, 0, 1), code = rng.tensor({1, c.code_dim});
  auto run = [&] {
    Tape tape;
    auto p = bind_all(tape, params);
    return net::depthnet(p, c, tape.constant(img), tape.constant(code)).back().value();
  };
  EXPECT_EQ(run(), run());
}
