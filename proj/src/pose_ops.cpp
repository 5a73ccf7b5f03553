#include "seqvo/pose_ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "seqvo/errors.hpp"
#include "seqvo/geometry.hpp"
#include "seqvo/ops.hpp"

namespace seqvo::geometry {
namespace {

using ad::NodeId;
using ad::Tape;
using ad::Var;

Eigen::Matrix3d rot_x(double a) {
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}
Eigen::Matrix3d rot_y(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}
Eigen::Matrix3d rot_z(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}
Eigen::Matrix3d d_rot_x(double a) {
  Eigen::Matrix3d r;
  r << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return r;
}
Eigen::Matrix3d d_rot_y(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
  return r;
}
Eigen::Matrix3d d_rot_z(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
  return r;
}

void require_shape(const Var& v, std::size_t a, std::size_t b, const char* op) {
  const Shape& s = v.shape();
  if (s.size() != a || s.back() != b || (a == 3 && s[1] != 4)) {
    throw ShapeError(std::string(op) + ": unexpected shape " + to_string(s));
  }
}

}  // namespace

Var pose_to_matrix(Var poses) {
  require_shape(poses, 2, 6, "pose_to_matrix");
  const std::size_t B = poses.shape()[0];
  Tensor out({B, 4, 4});
  const Tensor& P = poses.value();
  for (std::size_t i = 0; i < B; ++i) {
    const double* p = P.ptr() + i * 6;
    const Eigen::Matrix3d r = euler_to_rotation(p[0], p[1], p[2]);
    double* m = out.ptr() + i * 16;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) m[a * 4 + b] = r(a, b);
      m[a * 4 + 3] = p[3 + a];
    }
    m[12] = m[13] = m[14] = 0.0;
    m[15] = 1.0;
  }
  const NodeId pid = poses.id();
  return poses.tape().record(std::move(out), {poses}, [pid, B](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& P = t.value(pid);
    Tensor& gp = t.grad_accum(pid);
    for (std::size_t i = 0; i < B; ++i) {
      const double* p = P.ptr() + i * 6;
      const double* gm = g.ptr() + i * 16;
      Eigen::Matrix3d gr;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) gr(a, b) = gm[a * 4 + b];
      }
      const Eigen::Matrix3d rx = rot_x(p[0]), ry = rot_y(p[1]), rz = rot_z(p[2]);
      gp[i * 6 + 0] += (gr.array() * (rz * ry * d_rot_x(p[0])).array()).sum();
      gp[i * 6 + 1] += (gr.array() * (rz * d_rot_y(p[1]) * rx).array()).sum();
      gp[i * 6 + 2] += (gr.array() * (d_rot_z(p[2]) * ry * rx).array()).sum();
      for (int a = 0; a < 3; ++a) gp[i * 6 + 3 + a] += gm[a * 4 + 3];
    }
  });
}

Var matrix_to_pose(Var transforms) {
  require_shape(transforms, 3, 4, "matrix_to_pose");
  const std::size_t B = transforms.shape()[0];
  Tensor out({B, 6});
  const Tensor& T = transforms.value();
  for (std::size_t i = 0; i < B; ++i) {
    const double* m = T.ptr() + i * 16;
    double* p = out.ptr() + i * 6;
    const double r00 = m[0], r10 = m[4], r20 = m[8], r21 = m[9], r22 = m[10];
    p[0] = std::atan2(r21, r22);
    p[1] = std::atan2(-r20, std::hypot(r00, r10));
    p[2] = std::atan2(r10, r00);
    p[3] = m[3];
    p[4] = m[7];
    p[5] = m[11];
  }
  const NodeId tid = transforms.id();
  return transforms.tape().record(std::move(out), {transforms}, [tid, B](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& T = t.value(tid);
    Tensor& gt = t.grad_accum(tid);
    for (std::size_t i = 0; i < B; ++i) {
      const double* m = T.ptr() + i * 16;
      const double* gp = g.ptr() + i * 6;
      double* gm = gt.ptr() + i * 16;
      const double r00 = m[0], r10 = m[4], r20 = m[8], r21 = m[9], r22 = m[10];
      // rx = atan2(r21, r22)
      const double qx = std::max(r21 * r21 + r22 * r22, 1e-300);
      gm[9] += gp[0] * r22 / qx;
      gm[10] += gp[0] * -r21 / qx;
      // ry = atan2(-r20, r), r = hypot(r00, r10)
      const double r = std::max(std::hypot(r00, r10), 1e-12);
      const double qy = r * r + r20 * r20;
      const double d_r = gp[1] * r20 / qy;
      gm[8] += gp[1] * -r / qy;
      gm[0] += d_r * r00 / r;
      gm[4] += d_r * r10 / r;
      // rz = atan2(r10, r00)
      const double qz = std::max(r00 * r00 + r10 * r10, 1e-300);
      gm[4] += gp[2] * r00 / qz;
      gm[0] += gp[2] * -r10 / qz;
      gm[3] += gp[3];
      gm[7] += gp[4];
      gm[11] += gp[5];
    }
  });
}

Var rigid_inverse(Var transforms) {
  require_shape(transforms, 3, 4, "rigid_inverse");
  const std::size_t B = transforms.shape()[0];
  Tensor out({B, 4, 4});
  const Tensor& T = transforms.value();
  for (std::size_t i = 0; i < B; ++i) {
    const double* m = T.ptr() + i * 16;
    double* o = out.ptr() + i * 16;
    for (int a = 0; a < 3; ++a) {
      double s = 0.0;
      for (int b = 0; b < 3; ++b) {
        o[a * 4 + b] = m[b * 4 + a];
        s += m[b * 4 + a] * m[b * 4 + 3];
      }
      o[a * 4 + 3] = -s;
    }
    o[12] = o[13] = o[14] = 0.0;
    o[15] = 1.0;
  }
  const NodeId tid = transforms.id();
  return transforms.tape().record(std::move(out), {transforms}, [tid, B](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& T = t.value(tid);
    Tensor& gt = t.grad_accum(tid);
    for (std::size_t i = 0; i < B; ++i) {
      const double* m = T.ptr() + i * 16;
      const double* go = g.ptr() + i * 16;
      double* gm = gt.ptr() + i * 16;
      // o[a][b] = m[b][a];  o[a][3] = -sum_b m[b][a] m[b][3]
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          gm[b * 4 + a] += go[a * 4 + b];
          gm[b * 4 + a] += -go[a * 4 + 3] * m[b * 4 + 3];
          gm[b * 4 + 3] += -go[a * 4 + 3] * m[b * 4 + a];
        }
      }
    }
  });
}

Var compose(Var a, Var b) {
  require_shape(a, 3, 4, "compose");
  require_shape(b, 3, 4, "compose");
  return ad::batched_matmul(a, b);
}

}  // namespace seqvo::geometry
