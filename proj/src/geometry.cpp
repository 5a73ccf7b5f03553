#include "seqvo/geometry.hpp"

#include <Eigen/LU>
#include <cmath>
#include <numbers>

#include "seqvo/errors.hpp"

namespace seqvo::geometry {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw GeometryError("focal lengths must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw GeometryError("principal point lies outside the image");
  }
}

Intrinsics Intrinsics::zoomed(double s) const {
  Intrinsics k = *this;
  k.fx *= s;
  k.fy *= s;
  return k;
}

Intrinsics Intrinsics::resized(std::size_t new_height, std::size_t new_width) const {
  const double sx = static_cast<double>(new_width) / static_cast<double>(width);
  const double sy = static_cast<double>(new_height) / static_cast<double>(height);
  Intrinsics k;
  k.fx = fx * sx;
  k.fy = fy * sy;
  k.cx = (cx + 0.5) * sx - 0.5;
  k.cy = (cy + 0.5) * sy - 0.5;
  k.width = new_width;
  k.height = new_height;
  return k;
}

Transform::Transform(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) : m_(Eigen::Matrix4d::Identity()) {
  m_.topLeftCorner<3, 3>() = r;
  m_.topRightCorner<3, 1>() = t;
}

Transform Transform::translation(double x, double y, double z) {
  return Transform(Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, z));
}

double Transform::rigidity_error() const {
  const Eigen::Matrix3d r = rotation();
  double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  err = std::max(err, std::abs(r.determinant() - 1.0));
  err = std::max(err, (m_.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff());
  return err;
}

Eigen::Matrix3d euler_to_rotation(double rx, double ry, double rz) {
  const double cx = std::cos(rx), sx = std::sin(rx);
  const double cy = std::cos(ry), sy = std::sin(ry);
  const double cz = std::cos(rz), sz = std::sin(rz);
  Eigen::Matrix3d r;
  r << cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
       sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
       -sy, cy * sx, cy * cx;
  return r;
}

Transform pose_to_transform(const Pose6& p) {
  return Transform(euler_to_rotation(p.rx, p.ry, p.rz), Eigen::Vector3d(p.tx, p.ty, p.tz));
}

Pose6 transform_to_pose(const Transform& t) {
  const Eigen::Matrix3d r = t.rotation();
  const double cos_ry = std::hypot(r(0, 0), r(1, 0));
  if (cos_ry < std::sin(1e-6)) {
    throw GeometryError("gimbal lock: rotation about the y axis is within 1e-6 of +-pi/2");
  }
  Pose6 p;
  p.rx = std::atan2(r(2, 1), r(2, 2));
  p.ry = std::atan2(-r(2, 0), cos_ry);
  p.rz = std::atan2(r(1, 0), r(0, 0));
  p.tx = t.matrix()(0, 3);
  p.ty = t.matrix()(1, 3);
  p.tz = t.matrix()(2, 3);
  return p;
}

Transform compose(const Transform& a, const Transform& b) { return a * b; }

Transform invert(const Transform& t) {
  const Eigen::Matrix3d rt = t.rotation().transpose();
  return Transform(rt, -rt * t.translation());
}

Eigen::Vector3d backproject(const Pixel& p, double depth, const Intrinsics& k) {
  return {(p.u - k.cx) * depth / k.fx, (p.v - k.cy) * depth / k.fy, depth};
}

std::optional<Pixel> project(const Eigen::Vector3d& point, const Intrinsics& k) {
  if (!(point.z() > 0.0)) return std::nullopt;
  return Pixel{k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy};
}

Tensor pixel_grid(std::size_t height, std::size_t width) {
  Tensor g({height, width, 2});
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      g[(r * width + c) * 2] = static_cast<double>(c);
      g[(r * width + c) * 2 + 1] = static_cast<double>(r);
    }
  }
  return g;
}

std::array<double, 12> to_row_major_3x4(const Transform& t) {
  std::array<double, 12> a{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) a[r * 4 + c] = t.matrix()(r, c);
  }
  return a;
}

}  // namespace seqvo::geometry
