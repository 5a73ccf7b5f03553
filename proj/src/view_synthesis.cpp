#include "seqvo/view_synthesis.hpp"

#include <cmath>

#include "seqvo/errors.hpp"

namespace seqvo::view {
namespace {

using ad::NodeId;
using ad::Tape;
using ad::Var;
using geometry::Intrinsics;

const Intrinsics& intrinsics_for(std::span<const Intrinsics> k, std::size_t b) {
  return k.size() == 1 ? k[0] : k[b];
}

void check_intrinsics(std::span<const Intrinsics> k, std::size_t batch) {
  if (k.size() != 1 && k.size() != batch) {
    throw ShapeError("expected 1 or " + std::to_string(batch) + " intrinsics, got " + std::to_string(k.size()));
  }
}

// Round-off from back-projection can push border pixels a few ulps outside the image.
bool in_bounds(double u, double v, std::size_t h, std::size_t w) {
  constexpr double kSlack = 1e-9;
  return u >= -kSlack && u <= static_cast<double>(w - 1) + kSlack && v >= -kSlack &&
         v <= static_cast<double>(h - 1) + kSlack;
}

// Fills coords/valid for one batch element from a row-major [R|t].
void correspond_plane(const double* depth, const double* rt, const Intrinsics& k, std::size_t h, std::size_t w,
                      double* cu, double* cv, double* valid) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const auto p = geometry::warp_point(static_cast<double>(c), static_cast<double>(r), depth[i], rt, k);
      if (p.z > geometry::kMinProjectedDepth && std::isfinite(p.u) && std::isfinite(p.v)) {
        cu[i] = p.u;
        cv[i] = p.v;
        valid[i] = in_bounds(p.u, p.v, h, w) ? 1.0 : 0.0;
      } else {
        cu[i] = kInvalidCoord;
        cv[i] = kInvalidCoord;
        valid[i] = 0.0;
      }
    }
  }
}

void check_depth(const Shape& s, const char* op) {
  if (s.size() != 4 || s[1] != 1) throw ShapeError(std::string(op) + ": depth must be B x 1 x H x W, got " + to_string(s));
}

}  // namespace

Correspondence correspondence(const Tensor& depth, std::span<const geometry::Transform> target_to_source,
                              std::span<const Intrinsics> intrinsics) {
  check_depth(depth.shape(), "correspondence");
  const std::size_t B = depth.dim(0), H = depth.dim(2), W = depth.dim(3);
  if (target_to_source.size() != B) throw ShapeError("correspondence: one transform per batch element required");
  check_intrinsics(intrinsics, B);
  Correspondence out{Tensor({B, 2, H, W}), Tensor({B, 1, H, W})};
  for (std::size_t b = 0; b < B; ++b) {
    const auto rt = geometry::to_row_major_3x4(target_to_source[b]);
    double* coords = out.coords.ptr() + b * 2 * H * W;
    correspond_plane(depth.ptr() + b * H * W, rt.data(), intrinsics_for(intrinsics, b), H, W, coords,
                     coords + H * W, out.valid.ptr() + b * H * W);
  }
  return out;
}

WarpCoords correspondence(Var depth, Var target_to_source, std::span<const Intrinsics> intrinsics) {
  check_depth(depth.shape(), "correspondence");
  const std::size_t B = depth.shape()[0], H = depth.shape()[2], W = depth.shape()[3];
  const Shape& ts = target_to_source.shape();
  if (ts.size() != 3 || ts[0] != B || ts[1] != 4 || ts[2] != 4) {
    throw ShapeError("correspondence: transforms must be B x 4 x 4, got " + to_string(ts));
  }
  check_intrinsics(intrinsics, B);
  Tensor coords({B, 2, H, W});
  Tensor valid({B, 1, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    const double* m = target_to_source.value().ptr() + b * 16;
    double* c = coords.ptr() + b * 2 * H * W;
    correspond_plane(depth.value().ptr() + b * H * W, m, intrinsics_for(intrinsics, b), H, W, c, c + H * W,
                     valid.ptr() + b * H * W);
  }
  std::vector<Intrinsics> ks(intrinsics.begin(), intrinsics.end());
  const NodeId did = depth.id(), tid = target_to_source.id();
  Var out = depth.tape().record(std::move(coords), {depth, target_to_source},
                                [did, tid, ks = std::move(ks), B, H, W](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& D = t.value(did);
    const Tensor& T = t.value(tid);
    const bool want_d = t.requires_grad(did), want_t = t.requires_grad(tid);
    Tensor* gd = want_d ? &t.grad_accum(did) : nullptr;
    Tensor* gt = want_t ? &t.grad_accum(tid) : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const Intrinsics& k = ks.size() == 1 ? ks[0] : ks[b];
      const double* m = T.ptr() + b * 16;
      const double* gu = g.ptr() + b * 2 * H * W;
      const double* gv = gu + H * W;
      double acc[12] = {0};
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          const std::size_t i = r * W + c;
          const double d = D[b * H * W + i];
          const auto p = geometry::warp_point(static_cast<double>(c), static_cast<double>(r), d, m, k);
          if (!(p.z > geometry::kMinProjectedDepth) || !std::isfinite(p.u) || !std::isfinite(p.v)) continue;
          const double inv_z = 1.0 / p.z;
          // Gradient with respect to the transformed point.
          const double gx = gu[i] * k.fx * inv_z;
          const double gy = gv[i] * k.fy * inv_z;
          const double gz = -(gu[i] * k.fx * p.x + gv[i] * k.fy * p.y) * inv_z * inv_z;
          const double rx = (static_cast<double>(c) - k.cx) / k.fx;
          const double ry = (static_cast<double>(r) - k.cy) / k.fy;
          if (gd) {
            const double dx = m[0] * rx + m[1] * ry + m[2];
            const double dy = m[4] * rx + m[5] * ry + m[6];
            const double dz = m[8] * rx + m[9] * ry + m[10];
            (*gd)[b * H * W + i] += gx * dx + gy * dy + gz * dz;
          }
          if (gt) {
            const double P[3] = {rx * d, ry * d, d};
            const double G[3] = {gx, gy, gz};
            for (int a = 0; a < 3; ++a) {
              for (int j = 0; j < 3; ++j) acc[a * 4 + j] += G[a] * P[j];
              acc[a * 4 + 3] += G[a];
            }
          }
        }
      }
      if (gt) {
        for (int a = 0; a < 12; ++a) (*gt)[b * 16 + a] += acc[a];
      }
    }
  });
  return {out, std::move(valid)};
}

namespace {

struct Tap {
  double x, y;
  long x0, y0;
  double wx, wy;
};

Tap make_tap(double u, double v) {
  Tap tap{};
  tap.x = u;
  tap.y = v;
  const double fx = std::floor(u), fy = std::floor(v);
  tap.x0 = static_cast<long>(fx);
  tap.y0 = static_cast<long>(fy);
  tap.wx = u - fx;
  tap.wy = v - fy;
  return tap;
}

inline double at_or_zero(const double* plane, long y, long x, long h, long w) {
  return (x >= 0 && x < w && y >= 0 && y < h) ? plane[y * w + x] : 0.0;
}

constexpr double kMaxCoord = 1e7;

bool usable(double u, double v) {
  return std::isfinite(u) && std::isfinite(v) && std::abs(u) < kMaxCoord && std::abs(v) < kMaxCoord;
}

void sample_forward(const Tensor& src, const Tensor& coords, Tensor& out) {
  const std::size_t B = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const std::size_t Ho = coords.dim(2), Wo = coords.dim(3);
  const long h = static_cast<long>(H), w = static_cast<long>(W);
  for (std::size_t b = 0; b < B; ++b) {
    const double* cu = coords.ptr() + b * 2 * Ho * Wo;
    const double* cv = cu + Ho * Wo;
    for (std::size_t i = 0; i < Ho * Wo; ++i) {
      if (!usable(cu[i], cv[i])) {
        for (std::size_t c = 0; c < C; ++c) out[(b * C + c) * Ho * Wo + i] = 0.0;
        continue;
      }
      const Tap t = make_tap(cu[i], cv[i]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* plane = src.ptr() + (b * C + c) * H * W;
        const double v00 = at_or_zero(plane, t.y0, t.x0, h, w);
        const double v01 = at_or_zero(plane, t.y0, t.x0 + 1, h, w);
        const double v10 = at_or_zero(plane, t.y0 + 1, t.x0, h, w);
        const double v11 = at_or_zero(plane, t.y0 + 1, t.x0 + 1, h, w);
        out[(b * C + c) * Ho * Wo + i] = (1.0 - t.wx) * (1.0 - t.wy) * v00 + t.wx * (1.0 - t.wy) * v01 +
                                         (1.0 - t.wx) * t.wy * v10 + t.wx * t.wy * v11;
      }
    }
  }
}

void check_sample_shapes(const Shape& s, const Shape& c) {
  if (s.size() != 4 || c.size() != 4 || c[1] != 2 || c[0] != s[0]) {
    throw ShapeError("bilinear_sample: src " + to_string(s) + " and coords " + to_string(c) + " are incompatible");
  }
}

}  // namespace

Tensor bilinear_sample(const Tensor& src, const Tensor& coords) {
  check_sample_shapes(src.shape(), coords.shape());
  Tensor out({src.dim(0), src.dim(1), coords.dim(2), coords.dim(3)});
  sample_forward(src, coords, out);
  return out;
}

Var bilinear_sample(Var src, Var coords) {
  Tensor out = bilinear_sample(src.value(), coords.value());
  const NodeId sid = src.id(), cid = coords.id();
  return src.tape().record(std::move(out), {src, coords}, [sid, cid](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& S = t.value(sid);
    const Tensor& Cd = t.value(cid);
    const std::size_t B = S.dim(0), C = S.dim(1), H = S.dim(2), W = S.dim(3);
    const std::size_t Ho = Cd.dim(2), Wo = Cd.dim(3);
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    Tensor* gs = t.requires_grad(sid) ? &t.grad_accum(sid) : nullptr;
    Tensor* gc = t.requires_grad(cid) ? &t.grad_accum(cid) : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const double* cu = Cd.ptr() + b * 2 * Ho * Wo;
      const double* cv = cu + Ho * Wo;
      for (std::size_t i = 0; i < Ho * Wo; ++i) {
        if (!usable(cu[i], cv[i])) continue;
        const Tap tp = make_tap(cu[i], cv[i]);
        double du = 0.0, dv = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double go = g[(b * C + c) * Ho * Wo + i];
          if (go == 0.0) continue;
          const std::size_t base = (b * C + c) * H * W;
          const double* plane = S.ptr() + base;
          if (gc) {
            const double v00 = at_or_zero(plane, tp.y0, tp.x0, h, w);
            const double v01 = at_or_zero(plane, tp.y0, tp.x0 + 1, h, w);
            const double v10 = at_or_zero(plane, tp.y0 + 1, tp.x0, h, w);
            const double v11 = at_or_zero(plane, tp.y0 + 1, tp.x0 + 1, h, w);
            du += go * ((1.0 - tp.wy) * (v01 - v00) + tp.wy * (v11 - v10));
            dv += go * ((1.0 - tp.wx) * (v10 - v00) + tp.wx * (v11 - v01));
          }
          if (gs) {
            const long ys[2] = {tp.y0, tp.y0 + 1};
            const long xs[2] = {tp.x0, tp.x0 + 1};
            const double wys[2] = {1.0 - tp.wy, tp.wy};
            const double wxs[2] = {1.0 - tp.wx, tp.wx};
            for (int a = 0; a < 2; ++a) {
              if (ys[a] < 0 || ys[a] >= h) continue;
              for (int e = 0; e < 2; ++e) {
                if (xs[e] < 0 || xs[e] >= w) continue;
                (*gs)[base + ys[a] * w + xs[e]] += go * wys[a] * wxs[e];
              }
            }
          }
        }
        if (gc) {
          (*gc)[b * 2 * Ho * Wo + i] += du;
          (*gc)[b * 2 * Ho * Wo + Ho * Wo + i] += dv;
        }
      }
    }
  });
}

WarpResult synthesize(Var src, Var depth, Var target_to_source, std::span<const Intrinsics> intrinsics) {
  WarpCoords wc = correspondence(depth, target_to_source, intrinsics);
  Var image = bilinear_sample(src, wc.coords);
  return {image, std::move(wc.valid), wc.coords};
}

FlowField rigid_flow(const Tensor& depth, const geometry::Transform& target_to_source,
                     const Intrinsics& intrinsics) {
  if (depth.rank() != 2) throw ShapeError("rigid_flow: depth must be H x W");
  const std::size_t H = depth.dim(0), W = depth.dim(1);
  const geometry::Transform ts[1] = {target_to_source};
  const Intrinsics ks[1] = {intrinsics};
  const Correspondence c = correspondence(depth.reshaped({1, 1, H, W}), ts, ks);
  FlowField f{Tensor({H, W, 2}), Tensor({H, W})};
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t col = 0; col < W; ++col) {
      const std::size_t i = r * W + col;
      if (c.valid[i] == 0.0) continue;
      f.valid[i] = 1.0;
      f.uv[i * 2] = c.coords[i] - static_cast<double>(col);
      f.uv[i * 2 + 1] = c.coords[H * W + i] - static_cast<double>(r);
    }
  }
  return f;
}

}  // namespace seqvo::view
