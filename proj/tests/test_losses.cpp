#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "seqvo/errors.hpp"
#include "seqvo/geometry.hpp"
#include "seqvo/gradcheck.hpp"
#include "seqvo/losses.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/pose_ops.hpp"
#include "test_util.hpp"

using namespace seqvo;
using ad::Tape;
using ad::Var;
using seqvo::testing::Rng;

namespace {

constexpr double kLn2 = std::numbers::ln2;

Tensor pose_row(const geometry::Pose6& p) {
  Tensor t({1, 6});
  const auto a = p.as_array();
  for (std::size_t j = 0; j < 6; ++j) t[j] = a[j];
  return t;
}

// Direct poses equal to the exact composition of the one-step chain.
std::vector<Tensor> composed_direct(const std::vector<geometry::Pose6>& steps) {
  std::vector<Tensor> direct;
  for (const auto& pair : loss::tc_pairs(steps.size() + 1)) {
    geometry::Transform t;
    for (std::size_t k = pair.start; k < pair.start + pair.span; ++k) {
      t = geometry::compose(geometry::pose_to_transform(steps[k]), t);
    }
    direct.push_back(pose_row(geometry::transform_to_pose(t)));
  }
  return direct;
}

double tc_value(const std::vector<geometry::Pose6>& steps, const std::vector<Tensor>& direct) {
  Tape tape(ad::Precision::kFloat64);
  std::vector<Var> one, dir;
  for (const auto& s : steps) one.push_back(tape.constant(pose_row(s)));
  for (const auto& d : direct) dir.push_back(tape.constant(d));
  return loss::trajectory_consistency(one, dir).value().item();
}

}  // namespace

TEST(Photometric, Examples) {
  Tape tape(ad::Precision::kFloat64);
  Rng rng(1);
  const Tensor img = rng.tensor({2, 3, 5, 6}, 0, 1);
  const Tensor valid({2, 1, 5, 6}, 1.0);
  Var ones = tape.constant(Tensor({2, 1, 5, 6}, 1.0));
  EXPECT_EQ(loss::photometric_masked(tape.constant(img), tape.constant(img), valid, ones).value().item(), 0.0);

  Var a = tape.leaf(rng.tensor({2, 3, 5, 6}, 0, 1));
  Var b = tape.leaf(rng.tensor({2, 3, 5, 6}, 0, 1));
  Var zero_mask = tape.constant(Tensor({2, 1, 5, 6}, 0.0));
  Var l = loss::photometric_masked(a, b, valid, zero_mask);
  EXPECT_EQ(l.value().item(), 0.0);
  tape.backward(l);
  for (double g : a.grad().data()) EXPECT_EQ(g, 0.0);
  for (double g : b.grad().data()) EXPECT_EQ(g, 0.0);

  Var p = loss::photometric_masked(tape.constant(Tensor({1, 3, 4, 4}, 0.5)), tape.constant(Tensor({1, 3, 4, 4}, 0.3)),
                                   Tensor({1, 1, 4, 4}, 1.0), tape.constant(Tensor({1, 1, 4, 4}, 1.0)));
  EXPECT_NEAR(p.value().item(), 0.6, 1e-7);
}

TEST(Photometric, InvalidPixelsAreIgnored) {
  Tape tape(ad::Precision::kFloat64);
  Tensor target({1, 3, 2, 2}, 0.5), warped({1, 3, 2, 2}, 0.5);
  Tensor valid({1, 1, 2, 2}, 1.0);
  warped.at({0, 0, 1, 1}) = 0.0;
  valid.at({0, 0, 1, 1}) = 0.0;
  Var ones = tape.constant(Tensor({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(loss::photometric_masked(tape.constant(target), tape.constant(warped), valid, ones).value().item(), 0.0);
}

TEST(MaskRegularization, Examples) {
  Tape tape(ad::Precision::kFloat64);
  EXPECT_NEAR(loss::mask_regularization(tape.constant(Tensor({1, 1, 3, 3}, 1.0))).value().item(), 0.0, 1e-11);
  EXPECT_NEAR(loss::mask_regularization(tape.constant(Tensor({1, 1, 3, 3}, 0.5))).value().item(), kLn2, 1e-11);
  Rng rng(2);
  Var m = tape.leaf(rng.tensor({1, 1, 3, 3}, 0.01, 0.99));
  tape.backward(loss::mask_regularization(m));
  for (double g : m.grad().data()) EXPECT_LT(g, 0.0);
}

TEST(Ssim, Examples) {
  Tape tape(ad::Precision::kFloat64);
  Rng rng(3);
  const Tensor img = rng.tensor({1, 3, 14, 15}, 0, 1);
  Var s = loss::ssim(tape.constant(img), tape.constant(img), 10);
  EXPECT_EQ(s.shape(), (Shape{1, 3, 5, 6}));
  for (double v : s.value().data()) EXPECT_NEAR(v, 1.0, 1e-12);

  Var c = loss::ssim(tape.constant(Tensor({1, 1, 10, 10}, 0.2)), tape.constant(Tensor({1, 1, 10, 10}, 0.2)), 10);
  EXPECT_NEAR(c.value().item(), 1.0, 1e-12);

  Tensor board({1, 1, 10, 10});
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t col = 0; col < 10; ++col) board.at({0, 0, r, col}) = (r + col) % 2 ? 0.9 : 0.1;
  Tensor inverted = board;
  for (double& v : inverted.data()) v = 1.0 - v;
  // Equal means (0.5), variances 0.16, covariance -0.16.
  const double mu = 0.5, var = 0.16;
  const double expected = ((2 * mu * mu + loss::kSsimC1) * (-2 * var + loss::kSsimC2)) /
                          ((2 * mu * mu + loss::kSsimC1) * (2 * var + loss::kSsimC2));
  Var inv = loss::ssim(tape.constant(board), tape.constant(inverted), 10);
  EXPECT_LT(inv.value().item(), 0.0);
  EXPECT_NEAR(inv.value().item(), expected, 1e-12);
}

TEST(Appearance, Examples) {
  Tape tape(ad::Precision::kFloat64);
  Rng rng(4);
  const Tensor img = rng.tensor({1, 3, 12, 12}, 0, 1);
  const Tensor valid({1, 1, 12, 12}, 1.0);
  Var ones = tape.constant(Tensor({1, 1, 12, 12}, 1.0));
  const auto same = loss::appearance_loss(tape.constant(img), tape.constant(img), valid, ones, loss::LossWeights{});
  EXPECT_NEAR(same.ap.value().item(), 0.0, 1e-11);

  Var t = tape.constant(img);
  Var w = tape.constant(rng.tensor({1, 3, 12, 12}, 0, 1));
  Var m = tape.constant(rng.tensor({1, 1, 12, 12}, 0.2, 0.9));
  loss::LossWeights lw;
  lw.alpha = 0.0;
  const auto a0 = loss::appearance_loss(t, w, valid, m, lw);
  EXPECT_EQ(a0.ap.value().item(), a0.reg.value().item() + a0.pho.value().item());
  lw.alpha = 1.0;
  const auto a1 = loss::appearance_loss(t, w, valid, m, lw);
  EXPECT_EQ(a1.ap.value().item(), a1.reg.value().item() + a1.ssim.value().item());
  lw.alpha = 0.85;
  const auto a = loss::appearance_loss(t, w, valid, m, lw);
  EXPECT_NEAR(a.ap.value().item(),
              a.reg.value().item() + 0.15 * a.pho.value().item() + 0.85 * a.ssim.value().item(), 1e-14);
}

TEST(Smoothness, ConstantDepthIsZero) {
  Tape tape(ad::Precision::kFloat64);
  Rng rng(5);
  Var s = loss::smoothness(tape.constant(Tensor({2, 1, 6, 7}, 4.2)), tape.constant(rng.tensor({2, 3, 6, 7}, 0, 1)));
  EXPECT_EQ(s.value().item(), 0.0);
}

TEST(Smoothness, LinearRampOnFlatImage) {
  Tape tape(ad::Precision::kFloat64);
  const std::size_t H = 5, W = 8;
  Tensor depth({1, 1, H, W});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) depth.at({0, 0, r, c}) = 2.0 + 0.5 * static_cast<double>(c);
  double mean = 0.0;
  for (double v : depth.data()) mean += v;
  mean /= static_cast<double>(H * W);
  // x differences are 0.5 / mean everywhere, y differences vanish.
  Var s = loss::smoothness(tape.constant(depth), tape.constant(Tensor({1, 3, H, W}, 0.3)));
  EXPECT_NEAR(s.value().item(), 0.5 / mean, 1e-12);
}

TEST(Smoothness, EdgesDiscountDepthSteps) {
  Tape tape(ad::Precision::kFloat64);
  const std::size_t H = 6, W = 10;
  Tensor depth({1, 1, H, W}, 3.0), edge_image({1, 3, H, W}, 0.1);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = W / 2; c < W; ++c) {
      depth.at({0, 0, r, c}) = 6.0;
      for (std::size_t ch = 0; ch < 3; ++ch) edge_image.at({0, ch, r, c}) = 0.9;
    }
  const double on_edge = loss::smoothness(tape.constant(depth), tape.constant(edge_image)).value().item();
  const double on_flat = loss::smoothness(tape.constant(depth), tape.constant(Tensor({1, 3, H, W}, 0.1))).value().item();
  EXPECT_LT(on_edge, on_flat);
}

TEST(Smoothness, InvariantToDepthScale) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape(ad::Precision::kFloat64);
    const Tensor depth = rng.tensor({2, 1, 8, 9}, 0.5, 20.0);
    Var img = tape.constant(rng.tensor({2, 3, 8, 9}, 0, 1));
    const double base = loss::smoothness(tape.constant(depth), img).value().item();
    for (double c : {0.5, 2.0, 10.0}) {
      Tensor scaled = depth;
      for (double& v : scaled.data()) v *= c;
      EXPECT_NEAR(loss::smoothness(tape.constant(scaled), img).value().item(), base, 1e-6);
    }
  }
}

TEST(TrajectoryConsistency, PairsNeedNineFrames) {
  EXPECT_THROW(loss::tc_pairs(8), ShapeError);
  const auto pairs = loss::tc_pairs(9);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].span, 2u);
  EXPECT_EQ(pairs[1].span, 4u);
  EXPECT_EQ(pairs[2].span, 8u);
  EXPECT_EQ(loss::tc_pairs(15).size(), 21u);
}

TEST(TrajectoryConsistency, ZeroOnComposedChains) {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<geometry::Pose6> steps;
    const std::size_t frames = 9 + rng.index(4);
    for (std::size_t k = 0; k + 1 < frames; ++k) {
      steps.push_back({rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-1, 1),
                       rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    worst = std::max(worst, tc_value(steps, composed_direct(steps)));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(TrajectoryConsistency, IdentityChainIsZero) {
  const std::vector<geometry::Pose6> steps(8);
  std::vector<Tensor> direct(3, Tensor({1, 6}));
  EXPECT_EQ(tc_value(steps, direct), 0.0);
}

TEST(TrajectoryConsistency, TranslationExample) {
  std::vector<geometry::Pose6> steps(8);
  for (auto& s : steps) s.tx = 0.1;
  auto direct = composed_direct(steps);
  direct[0][3] = 0.25;  // span 2: chain gives 0.2
  EXPECT_NEAR(tc_value(steps, direct), 0.05, 1e-12);
}

TEST(Gan, Examples) {
  Tape tape(ad::Precision::kFloat64);
  const auto half = loss::gan_losses(tape.constant(Tensor({1, 1}, 0.5)), tape.constant(Tensor({1, 1}, 0.5)));
  EXPECT_NEAR(half.d_loss.value().item(), 2 * kLn2, 1e-12);
  EXPECT_NEAR(half.g_loss.value().item(), kLn2, 1e-12);

  const auto perfect = loss::gan_losses(tape.constant(Tensor({1, 1}, 1.0)), tape.constant(Tensor({1, 1}, 0.0)));
  EXPECT_LT(perfect.d_loss.value().item(), 1e-5);
  EXPECT_TRUE(std::isfinite(perfect.g_loss.value().item()));

  double prev = INFINITY;
  for (double f = 0.05; f < 1.0; f += 0.05) {
    const double g =
        loss::gan_losses(tape.constant(Tensor({1, 1}, 0.5)), tape.constant(Tensor({1, 1}, f))).g_loss.value().item();
    EXPECT_LT(g, prev);
    prev = g;
  }
}

TEST(TotalLoss, WeightsFromTheProtocol) {
  const loss::LossWeights w;
  loss::LossReport zero;
  EXPECT_EQ(loss::total_loss(zero, w).total, 0.0);
  loss::LossReport unit;
  unit.ap = unit.smo = unit.tc = unit.g_adv = 1.0;
  EXPECT_NEAR(loss::total_loss(unit, w).total, 1.0, 1e-15);

  loss::LossWeights no_gan = w;
  no_gan.lambda_g = 0.0;
  unit.g_adv = 1e6;
  EXPECT_NEAR(loss::total_loss(unit, no_gan).total, 0.99, 1e-12);

  Tape tape(ad::Precision::kFloat64);
  auto s = [&](double v) { return tape.constant(Tensor::scalar(v)); };
  EXPECT_NEAR(loss::weighted_total(s(1), s(1), s(1), s(1), w).value().item(), 1.0, 1e-15);
  EXPECT_NEAR(loss::weighted_total(s(1), s(1), std::nullopt, std::nullopt, w).value().item(), 0.85, 1e-15);
  // With a zero weight the adversarial term receives no gradient.
  Var g = tape.leaf(Tensor::scalar(5.0));
  Var total = loss::weighted_total(s(1), s(1), s(1), g, no_gan);
  EXPECT_NEAR(total.value().item(), 0.99, 1e-15);
  tape.backward(total);
  EXPECT_EQ(g.grad().item(), 0.0);
}

TEST(TotalLoss, LinearInEachComponent) {
  Rng rng(8);
  const loss::LossWeights w;
  for (int trial = 0; trial < 100; ++trial) {
    loss::LossReport r;
    r.ap = rng.uniform(0, 2);
    r.smo = rng.uniform(0, 2);
    r.tc = rng.uniform(0, 2);
    r.g_adv = rng.uniform(0, 2);
    const double base = loss::total_loss(r, w).total;
    loss::LossReport bumped = r;
    bumped.tc += 1.0;
    EXPECT_NEAR(loss::total_loss(bumped, w).total - base, w.lambda_t, 1e-12);
    bumped = r;
    bumped.ap += 1.0;
    EXPECT_NEAR(loss::total_loss(bumped, w).total - base, w.lambda_a, 1e-12);
  }
}

TEST(LossGradients, RandomSmallInputs) {
  Rng rng(9);
  const Tensor valid({1, 1, 6, 6}, 1.0);
  ad::GradCheckOptions fine;
  fine.eps = 1e-6;
  EXPECT_LT(ad::grad_check([&](Tape&, std::span<const Var> in) { return loss::photometric_masked(in[0], in[1], valid, in[2]); },
                           std::vector<Tensor>{rng.tensor({1, 3, 6, 6}, 0, 1), rng.tensor({1, 3, 6, 6}, 0, 1),
                                               rng.tensor({1, 1, 6, 6}, 0.1, 0.9)},
                           fine)
                .max_rel_error,
            1e-2);
  EXPECT_LT(ad::grad_check([](Tape&, std::span<const Var> in) { return loss::smoothness(in[0], in[1]); },
                           std::vector<Tensor>{rng.tensor({1, 1, 6, 6}, 1, 5), rng.tensor({1, 3, 6, 6}, 0, 1)}, fine)
                .max_rel_error,
            1e-2);
  EXPECT_LT(ad::grad_check([](Tape&, std::span<const Var> in) { return loss::gan_losses(in[0], in[1]).d_loss; },
                           std::vector<Tensor>{rng.tensor({3, 1}, 0.1, 0.9), rng.tensor({3, 1}, 0.1, 0.9)})
                .max_rel_error,
            1e-2);
}

TEST(LossLog, CsvColumns) {
  std::ostringstream out;
  loss::write_csv_header(out);
  EXPECT_EQ(out.str(), "step,pho,reg,ssim,ap,smo,tc,g_adv,d_adv,total\n");
  loss::LossReport r;
  r.total = 0.5;
  std::ostringstream row;
  loss::write_csv_row(row, 3, r);
  const std::string line = row.str();
  EXPECT_EQ(line.substr(0, 2), "3,");
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
}
