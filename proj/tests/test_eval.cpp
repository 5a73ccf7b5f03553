#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "seqvo/errors.hpp"
#include "seqvo/eval.hpp"
#include "test_util.hpp"

using namespace seqvo;
using namespace seqvo::eval;
using geometry::Pose6;
using geometry::Transform;
using seqvo::testing::Rng;

namespace {

Tensor map(std::size_t h, std::size_t w, std::initializer_list<double> v) {
  Tensor t({h, w});
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

// Straight per-pixel transcription of the metric definitions.
DepthMetrics naive(const Tensor& pred, const Tensor& gt, double cap, bool median_scale) {
  std::vector<double> p, g;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0 && gt[i] >= kMinGtDepth && gt[i] <= cap) {
      p.push_back(pred[i]);
      g.push_back(gt[i]);
    }
  }
  if (median_scale) {
    auto med = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double s = med(g) / med(p);
    for (double& x : p) x *= s;
  }
  DepthMetrics m;
  const double n = static_cast<double>(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    m.abs_rel += std::abs(p[i] - g[i]) / g[i];
    m.sq_rel += (p[i] - g[i]) * (p[i] - g[i]) / g[i];
    m.rmse += (p[i] - g[i]) * (p[i] - g[i]);
    m.rmse_log += std::pow(std::log(p[i] / g[i]), 2);
    const double t = std::max(p[i] / g[i], g[i] / p[i]);
    m.delta1 += t < 1.25;
    m.delta2 += t < 1.5625;
    m.delta3 += t < 1.953125;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  m.pixels = g.size();
  return m;
}

std::vector<Transform> straight_line(std::size_t n, double step) {
  std::vector<Transform> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Transform::translation(0, 0, step * static_cast<double>(i)));
  return out;
}

std::vector<Pose6> forward_steps(std::size_t n, double step) {
  std::vector<Pose6> out(n);
  for (auto& p : out) p.tz = -step;  // network direction maps frame i into i+1
  return out;
}

}  // namespace

TEST(DepthMetrics, PerfectPrediction) {
  const Tensor gt = map(2, 2, {1, 2, 4, 8});
  const auto m = depth_metrics(gt, gt, 80, false);
  EXPECT_EQ(m.abs_rel, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.delta1, 1.0);
  EXPECT_EQ(m.pixels, 4u);
}

TEST(DepthMetrics, WorkedExample) {
  const Tensor gt = map(1, 2, {2, 4});
  const Tensor pred = map(1, 2, {3, 4});
  const auto m = depth_metrics(pred, gt, 80, false);
  EXPECT_DOUBLE_EQ(m.abs_rel, 0.25);
  EXPECT_DOUBLE_EQ(m.sq_rel, 0.25);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(m.rmse_log, std::sqrt(std::pow(std::log(1.5), 2) / 2));
  EXPECT_DOUBLE_EQ(m.delta1, 0.5);
  EXPECT_DOUBLE_EQ(m.delta2, 1.0);
}

TEST(DepthMetrics, MedianScalingRemovesGlobalScale) {
  const Tensor gt = map(2, 2, {1, 2, 4, 8});
  Tensor pred = gt;
  for (double& v : pred.data()) v *= 0.37;
  const auto m = depth_metrics(pred, gt, 80, true);
  EXPECT_NEAR(m.abs_rel, 0.0, 1e-15);
}

TEST(DepthMetrics, CapAndMissingPixels) {
  const Tensor gt = map(1, 4, {0, 10, 60, 90});
  const Tensor pred = map(1, 4, {5, 10, 60, 1});
  EXPECT_EQ(depth_metrics(pred, gt, 80, false).pixels, 2u);
  EXPECT_EQ(depth_metrics(pred, gt, 50, false).pixels, 1u);
  EXPECT_EQ(depth_metrics(pred, gt, 80, false).abs_rel, 0.0);
  EXPECT_THROW(depth_metrics(pred, map(1, 4, {0, 0, 0, 0}), 80, false), Error);
}

TEST(DepthMetrics, CropRestrictsPixels) {
  const Tensor gt = map(2, 2, {1, 2, 4, 8});
  const Tensor pred = map(2, 2, {1, 2, 8, 8});
  EXPECT_EQ(depth_metrics(pred, gt, 80, false, Crop{0, 1, 0, 2}).abs_rel, 0.0);
  EXPECT_GT(depth_metrics(pred, gt, 80, false, Crop{1, 2, 0, 2}).abs_rel, 0.0);
  EXPECT_THROW(depth_metrics(pred, gt, 80, false, Crop{0, 3, 0, 2}), Error);
}

TEST(DepthMetrics, MatchesNaiveOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor gt = rng.tensor({16, 16}, 0.5, 100);
    for (double& v : gt.data())
      if (rng.uniform(0, 1) < 0.2) v = 0.0;
    gt[0] = rng.uniform(1, 40);
    const Tensor pred = rng.tensor({16, 16}, 0.2, 90);
    const bool med = trial % 2 == 0;
    const auto a = depth_metrics(pred, gt, 80, med);
    const auto b = naive(pred, gt, 80, med);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_NEAR(a.abs_rel, b.abs_rel, 1e-12 * std::max(1.0, b.abs_rel));
    EXPECT_NEAR(a.sq_rel, b.sq_rel, 1e-12 * std::max(1.0, b.sq_rel));
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12 * std::max(1.0, b.rmse));
    EXPECT_NEAR(a.rmse_log, b.rmse_log, 1e-12);
    EXPECT_NEAR(a.delta1, b.delta1, 1e-12);
    EXPECT_NEAR(a.delta2, b.delta2, 1e-12);
    EXPECT_NEAR(a.delta3, b.delta3, 1e-12);
  }
}

TEST(DepthMetrics, MonotoneInNoise) {
  Rng rng(2);
  const Tensor gt = rng.tensor({16, 16}, 1, 50);
  const Tensor noise = rng.tensor({16, 16}, -1, 1);
  double prev_abs = -1, prev_rmse = -1, prev_d1 = 2;
  for (double sigma : {0.0, 0.05, 0.1, 0.2, 0.4}) {
    Tensor pred = gt;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= std::exp(sigma * noise[i]);
    const auto m = depth_metrics(pred, gt, 80, false);
    EXPECT_GT(m.abs_rel, prev_abs);
    EXPECT_GT(m.rmse, prev_rmse);
    EXPECT_LE(m.delta1, prev_d1);
    prev_abs = m.abs_rel;
    prev_rmse = m.rmse;
    prev_d1 = m.delta1;
  }
}

TEST(Accumulate, ChainsInverses) {
  const auto t = accumulate(forward_steps(3, 0.5));
  ASSERT_EQ(t.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t[i].translation().z(), 0.5 * static_cast<double>(i), 1e-15);
  EXPECT_EQ(accumulate({}).size(), 1u);
}

TEST(SnippetAte, PerfectAndScaled) {
  const auto gt = straight_line(12, 0.5);
  auto r = snippet_ate(forward_steps(11, 0.5), gt, 5);
  EXPECT_EQ(r.per_snippet.size(), 8u);
  EXPECT_NEAR(r.mean, 0.0, 1e-12);
  EXPECT_NEAR(r.std, 0.0, 1e-12);
  EXPECT_EQ(r.degenerate, 0u);
  r = snippet_ate(forward_steps(11, 0.125), gt, 5);
  EXPECT_NEAR(r.mean, 0.0, 1e-12);
  for (double s : r.scales) EXPECT_NEAR(s, 4.0, 1e-12);
}

TEST(SnippetAte, ZeroMotionIsDegenerate) {
  const auto gt = straight_line(6, 1.0);
  const auto r = snippet_ate(std::vector<Pose6>(5), gt, 5);
  EXPECT_EQ(r.degenerate, 2u);
  // Error equals the RMS of the ground-truth offsets 0..4.
  EXPECT_NEAR(r.mean, std::sqrt((0 + 1 + 4 + 9 + 16) / 5.0), 1e-12);
}

TEST(SnippetAte, OppositeDirectionClampsScale) {
  const auto gt = straight_line(5, 1.0);
  const auto r = snippet_ate(forward_steps(4, -1.0), gt, 5);
  EXPECT_EQ(r.scales[0], 0.0);
  EXPECT_EQ(r.degenerate, 0u);
}

TEST(SnippetAte, ScaleInvariant) {
  Rng rng(3);
  std::vector<Transform> gt{Transform::identity()};
  std::vector<Pose6> pred;
  for (int i = 0; i < 20; ++i) {
    Pose6 p{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
            rng.uniform(-0.3, 0.3),   rng.uniform(-0.3, 0.3),   rng.uniform(-0.3, 0.3)};
    gt.push_back(gt.back() * geometry::pose_to_transform(p));
    p.tx += rng.uniform(-0.1, 0.1);
    pred.push_back(p);
  }
  const auto base = snippet_ate(pred, gt, 5);
  for (double s : {0.25, 2.0, 8.0}) {
    auto scaled = pred;
    for (auto& p : scaled) {
      p.tx *= s;
      p.ty *= s;
      p.tz *= s;
    }
    EXPECT_EQ(snippet_ate(scaled, gt, 5).mean, base.mean);
  }
}

// Brute-force scale search gives the same minimum as the closed form.
TEST(SnippetAte, ClosedFormScaleIsOptimal) {
  Rng rng(4);
  std::vector<Transform> gt{Transform::identity()};
  std::vector<Pose6> pred;
  for (int i = 0; i < 4; ++i) {
    gt.push_back(gt.back() * Transform::translation(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2)));
    pred.push_back({0, 0, 0, rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-2, 0)});
  }
  const auto r = snippet_ate(pred, gt, 5);
  const auto traj = accumulate(pred);
  double best = 1e300;
  for (int k = 0; k <= 40000; ++k) {
    const double s = k * 1e-4;
    double sq = 0;
    for (std::size_t i = 0; i < 5; ++i) sq += (s * traj[i].translation() - gt[i].translation()).squaredNorm();
    best = std::min(best, std::sqrt(sq / 5));
  }
  EXPECT_LE(r.mean, best + 1e-12);
  EXPECT_NEAR(r.mean, best, 1e-6);
}

TEST(SnippetAte, RejectsBadInput) {
  const auto gt = straight_line(5, 1.0);
  EXPECT_THROW(snippet_ate(std::vector<Pose6>(3), gt, 5), Error);
  EXPECT_THROW(snippet_ate(std::vector<Pose6>(4), gt, 1), Error);
  EXPECT_THROW(snippet_ate(std::vector<Pose6>(4), gt, 6), Error);
}
