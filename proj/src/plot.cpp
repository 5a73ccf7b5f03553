#include "seqvo/plot.hpp"

#include <algorithm>
#include <limits>
#include <ostream>

#include "seqvo/errors.hpp"
#include "seqvo/eval.hpp"

namespace seqvo::plot {

Trajectories align(std::span<const geometry::Pose6> pred_rel, std::span<const geometry::Transform> gt_poses) {
  if (pred_rel.size() + 1 != gt_poses.size()) {
    throw ShapeError("plot: " + std::to_string(pred_rel.size()) + " relative poses for " +
                     std::to_string(gt_poses.size()) + " frames");
  }
  Trajectories t;
  const auto acc = eval::accumulate(pred_rel);
  const geometry::Transform origin = geometry::invert(gt_poses.front());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < gt_poses.size(); ++i) {
    t.pred.push_back(acc[i].translation());
    t.gt.push_back((origin * gt_poses[i]).translation());
    num += t.pred.back().dot(t.gt.back());
    den += t.pred.back().squaredNorm();
  }
  t.scale = den > 0.0 ? std::max(0.0, num / den) : 0.0;
  for (auto& p : t.pred) p *= t.scale;
  return t;
}

void write_svg(std::ostream& out, const Trajectories& t) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, z0 = x0, z1 = -x0;
  for (const auto* line : {&t.pred, &t.gt}) {
    for (const auto& p : *line) {
      x0 = std::min(x0, p.x());
      x1 = std::max(x1, p.x());
      z0 = std::min(z0, p.z());
      z1 = std::max(z1, p.z());
    }
  }
  const double span = std::max({x1 - x0, z1 - z0, 1e-9});
  const double size = 480.0, margin = 20.0, k = size / span;
  auto points = [&](const std::vector<Eigen::Vector3d>& line) {
    std::string s;
    for (const auto& p : line) {
      if (!s.empty()) s += ' ';
      s += std::to_string(margin + (p.x() - x0) * k) + ',' + std::to_string(margin + size - (p.z() - z0) * k);
    }
    return s;
  };
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin << "\" height=\""
      << size + 2 * margin << "\">\n"
      << "  <polyline id=\"gt\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"" << points(t.gt)
      << "\"/>\n"
      << "  <polyline id=\"pred\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\" points=\"" << points(t.pred)
      << "\"/>\n"
      << "</svg>\n";
}

void write_csv(std::ostream& out, const Trajectories& t) {
  const auto prec = out.precision(12);
  out << "frame,pred_x,pred_y,pred_z,gt_x,gt_y,gt_z\n";
  for (std::size_t i = 0; i < t.gt.size(); ++i) {
    out << i << ',' << t.pred[i].x() << ',' << t.pred[i].y() << ',' << t.pred[i].z() << ',' << t.gt[i].x() << ','
        << t.gt[i].y() << ',' << t.gt[i].z() << '\n';
  }
  out.precision(prec);
}

}  // namespace seqvo::plot
