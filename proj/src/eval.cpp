#include "seqvo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqvo/errors.hpp"
#include "seqvo/ops.hpp"

namespace seqvo::eval {

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

}  // namespace

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, double cap, bool median_scale,
                           std::optional<Crop> crop) {
  if (pred.rank() != 2 || gt.rank() != 2) throw ShapeError("depth_metrics expects H x W maps");
  const std::size_t H = gt.dim(0), W = gt.dim(1);
  const Tensor p = ad::resize_bilinear(pred.reshaped({1, pred.dim(0), pred.dim(1)}), H, W);
  const Crop box = crop.value_or(Crop{0, H, 0, W});
  if (box.row1 > H || box.col1 > W || box.row0 >= box.row1 || box.col0 >= box.col1) {
    throw ShapeError("depth_metrics: crop outside the ground-truth image");
  }
  std::vector<double> ps, gs;
  for (std::size_t r = box.row0; r < box.row1; ++r) {
    for (std::size_t c = box.col0; c < box.col1; ++c) {
      const double g = gt[r * W + c];
      if (g > 0.0 && g >= kMinGtDepth && g <= cap) {
        ps.push_back(p[r * W + c]);
        gs.push_back(g);
      }
    }
  }
  if (gs.empty()) throw ShapeError("depth_metrics: no valid ground-truth pixels");
  if (median_scale) {
    const double ratio = median(gs) / median(ps);
    for (double& v : ps) v *= ratio;
  }
  DepthMetrics m;
  m.pixels = gs.size();
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const double e = ps[i] - gs[i];
    m.abs_rel += std::abs(e) / gs[i];
    m.sq_rel += e * e / gs[i];
    m.rmse += e * e;
    const double le = std::log(ps[i]) - std::log(gs[i]);
    m.rmse_log += le * le;
    const double ratio = std::max(ps[i] / gs[i], gs[i] / ps[i]);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(gs.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  return m;
}

std::vector<geometry::Transform> accumulate(std::span<const geometry::Pose6> rel) {
  std::vector<geometry::Transform> out{geometry::Transform::identity()};
  for (const auto& p : rel) out.push_back(out.back() * geometry::invert(geometry::pose_to_transform(p)));
  return out;
}

AteResult snippet_ate(std::span<const geometry::Pose6> pred_rel, std::span<const geometry::Transform> gt_poses,
                      std::size_t snippet_len) {
  if (snippet_len < 2) throw ShapeError("snippet_ate: snippet length must be at least 2");
  if (pred_rel.size() + 1 != gt_poses.size()) {
    throw ShapeError("snippet_ate: " + std::to_string(pred_rel.size()) + " relative poses for " +
                     std::to_string(gt_poses.size()) + " frames");
  }
  if (gt_poses.size() < snippet_len) throw ShapeError("snippet_ate: sequence shorter than one snippet");
  AteResult res;
  for (std::size_t s = 0; s + snippet_len <= gt_poses.size(); ++s) {
    const auto traj = accumulate(pred_rel.subspan(s, snippet_len - 1));
    const geometry::Transform origin_inv = geometry::invert(gt_poses[s]);
    std::vector<Eigen::Vector3d> p, g;
    for (std::size_t i = 0; i < snippet_len; ++i) {
      p.push_back(traj[i].translation());
      g.push_back((origin_inv * gt_poses[s + i]).translation());
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < snippet_len; ++i) {
      num += p[i].dot(g[i]);
      den += p[i].squaredNorm();
    }
    double scale = 0.0;
    if (den > 0.0) {
      scale = std::max(0.0, num / den);
    } else {
      ++res.degenerate;
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < snippet_len; ++i) sq += (scale * p[i] - g[i]).squaredNorm();
    res.per_snippet.push_back(std::sqrt(sq / static_cast<double>(snippet_len)));
    res.scales.push_back(scale);
  }
  const double n = static_cast<double>(res.per_snippet.size());
  res.mean = std::accumulate(res.per_snippet.begin(), res.per_snippet.end(), 0.0) / n;
  double var = 0.0;
  for (double e : res.per_snippet) var += (e - res.mean) * (e - res.mean);
  res.std = std::sqrt(var / n);
  return res;
}

}  // namespace seqvo::eval
