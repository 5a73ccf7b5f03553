#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>

#include "seqvo/tensor.hpp"

namespace seqvo::geometry {

// Pinhole intrinsics in pixels, no distortion.
struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  std::size_t width = 1, height = 1;

  // Throws GeometryError unless fx, fy > 0 and the principal point lies in
  // the image.
  void validate() const;
  // Scales the focal lengths about the principal point (image zoom).
  Intrinsics zoomed(double s) const;
  // Intrinsics for an image resized to (height, width) with half-pixel
  // centers.
  Intrinsics resized(std::size_t new_height, std::size_t new_width) const;
};

// Euler angles (radians) and translation (scene units). Rotation convention
// is R = Rz(rz) * Ry(ry) * Rx(rx).
struct Pose6 {
  double rx = 0.0, ry = 0.0, rz = 0.0;
  double tx = 0.0, ty = 0.0, tz = 0.0;

  std::array<double, 6> as_array() const { return {rx, ry, rz, tx, ty, tz}; }
  static Pose6 from_array(const std::array<double, 6>& a) { return {a[0], a[1], a[2], a[3], a[4], a[5]}; }
};

// Rigid-body transform stored as a homogeneous 4x4 matrix.
class Transform {
 public:
  Transform() : m_(Eigen::Matrix4d::Identity()) {}
  explicit Transform(const Eigen::Matrix4d& m) : m_(m) {}
  Transform(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);

  static Transform identity() { return Transform(); }
  static Transform translation(double x, double y, double z);

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }
  Transform operator*(const Transform& other) const { return Transform(Eigen::Matrix4d(m_ * other.m_)); }

  // Max deviation of R^T R from identity, |det R - 1| and the bottom row.
  double rigidity_error() const;

 private:
  Eigen::Matrix4d m_;
};

Eigen::Matrix3d euler_to_rotation(double rx, double ry, double rz);

Transform pose_to_transform(const Pose6& p);
// Throws GeometryError when |ry| is within 1e-6 of pi/2 (gimbal lock).
Pose6 transform_to_pose(const Transform& t);

Transform compose(const Transform& a, const Transform& b);
Transform invert(const Transform& t);

struct Pixel {
  double u = 0.0, v = 0.0;
};

Eigen::Vector3d backproject(const Pixel& p, double depth, const Intrinsics& k);
// nullopt when the point is not in front of the camera (Z <= 0).
std::optional<Pixel> project(const Eigen::Vector3d& point, const Intrinsics& k);

// H x W x 2 grid whose entry (r, c) is (c, r) in (u, v) order.
Tensor pixel_grid(std::size_t height, std::size_t width);

// Points closer than this to the camera plane are treated as invalid
// projections.
inline constexpr double kMinProjectedDepth = 1e-6;

// Back-projects target pixel (u, v) at `depth`, applies the row-major 3x4
// rigid transform `rt` and projects into the source view. Shared by the
// differentiable warp, rigid flow and the synthetic renderer.
struct WarpedPoint {
  double x, y, z;  // transformed 3D point
  double u, v;     // source pixel (meaningful only when z > kMinProjectedDepth)
};

inline WarpedPoint warp_point(double u, double v, double depth, const double* rt, const Intrinsics& k) {
  const double px = (u - k.cx) * depth / k.fx;
  const double py = (v - k.cy) * depth / k.fy;
  const double pz = depth;
  WarpedPoint w{};
  w.x = rt[0] * px + rt[1] * py + rt[2] * pz + rt[3];
  w.y = rt[4] * px + rt[5] * py + rt[6] * pz + rt[7];
  w.z = rt[8] * px + rt[9] * py + rt[10] * pz + rt[11];
  // Project through K R K^-1 in pixel space so that the identity maps every
  // pixel onto itself without round-off.
  const double m00 = rt[0] + k.cx * rt[8] / k.fx, m01 = (k.fx * rt[1] + k.cx * rt[9]) / k.fy;
  const double m02 = k.fx * rt[2] + k.cx * rt[10] - k.cx * m00 - k.cy * m01;
  const double m10 = (k.fy * rt[4] + k.cy * rt[8]) / k.fx, m11 = rt[5] + k.cy * rt[9] / k.fy;
  const double m12 = k.fy * rt[6] + k.cy * rt[10] - k.cx * m10 - k.cy * m11;
  const double m20 = rt[8] / k.fx, m21 = rt[9] / k.fy;
  const double m22 = rt[10] - k.cx * m20 - k.cy * m21;
  const double inv_d = 1.0 / depth;
  const double den = m20 * u + m21 * v + m22 + rt[11] * inv_d;
  w.u = (m00 * u + m01 * v + m02 + (k.fx * rt[3] + k.cx * rt[11]) * inv_d) / den;
  w.v = (m10 * u + m11 * v + m12 + (k.fy * rt[7] + k.cy * rt[11]) * inv_d) / den;
  return w;
}

// Row-major [R | t] of a transform, the layout warp_point expects.
std::array<double, 12> to_row_major_3x4(const Transform& t);

}  // namespace seqvo::geometry
