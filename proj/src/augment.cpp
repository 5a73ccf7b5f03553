#include "seqvo/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace seqvo::augment {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

struct Mapping {
  double cx, cy, cos_t, sin_t, zoom;

  // Input coordinate sampled by output pixel (u, v).
  void source(double u, double v, double& su, double& sv) const {
    const double du = (u - cx) / zoom, dv = (v - cy) / zoom;
    su = cx + cos_t * du + sin_t * dv;
    sv = cy - sin_t * du + cos_t * dv;
  }
};

double clamped_bilinear(const double* plane, std::size_t h, std::size_t w, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(w - 1));
  v = std::clamp(v, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(u));
  const auto y0 = static_cast<std::size_t>(std::floor(v));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = u - static_cast<double>(x0), ay = v - static_cast<double>(y0);
  return (1 - ay) * ((1 - ax) * plane[y0 * w + x0] + ax * plane[y0 * w + x1]) +
         ay * ((1 - ax) * plane[y1 * w + x0] + ax * plane[y1 * w + x1]);
}

std::size_t nearest_index(std::size_t h, std::size_t w, double u, double v) {
  const auto x = static_cast<std::size_t>(std::clamp(std::floor(u + 0.5), 0.0, static_cast<double>(w - 1)));
  const auto y = static_cast<std::size_t>(std::clamp(std::floor(v + 0.5), 0.0, static_cast<double>(h - 1)));
  return y * w + x;
}

}  // namespace

AugmentParams draw(std::mt19937_64& rng, const AugmentSpec& spec) {
  AugmentParams p;
  const double max_rot = spec.max_rotation_deg * std::numbers::pi / 180.0;
  p.rotation = uniform(rng, -max_rot, max_rot);
  p.zoom = uniform(rng, spec.min_zoom, spec.max_zoom);
  for (double& g : p.gain) g = uniform(rng, spec.min_gain, spec.max_gain);
  return p;
}

geometry::Transform camera_roll(const AugmentParams& params) {
  return geometry::pose_to_transform({0.0, 0.0, params.rotation, 0.0, 0.0, 0.0});
}

data::Snippet apply(const data::Snippet& in, const AugmentParams& params) {
  const bool identity = params.rotation == 0.0 && params.zoom == 1.0;
  const Mapping map{in.intrinsics.cx, in.intrinsics.cy, std::cos(params.rotation), std::sin(params.rotation),
                    params.zoom};
  data::Snippet out;
  out.intrinsics = in.intrinsics;
  out.intrinsics.fx *= params.zoom;
  out.intrinsics.fy *= params.zoom;

  for (const Tensor& img : in.images) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    Tensor res({3, h, w});
    for (std::size_t c = 0; c < 3; ++c) {
      const double* plane = img.ptr() + c * h * w;
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          double v = plane[r * w + col];
          if (!identity) {
            double su, sv;
            map.source(static_cast<double>(col), static_cast<double>(r), su, sv);
            v = clamped_bilinear(plane, h, w, su, sv);
          }
          res[(c * h + r) * w + col] = std::clamp(v * params.gain[c], 0.0, 1.0);
        }
      }
    }
    out.images.push_back(std::move(res));
  }

  for (const FlowField& f : in.flows) {
    if (identity) {
      out.flows.push_back(f);
      continue;
    }
    const std::size_t h = f.height(), w = f.width();
    const Tensor chw = f.to_chw();
    FlowField res{Tensor({h, w, 2}), Tensor({h, w})};
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        double su, sv;
        map.source(static_cast<double>(col), static_cast<double>(r), su, sv);
        const double fu = clamped_bilinear(chw.ptr(), h, w, su, sv);
        const double fv = clamped_bilinear(chw.ptr() + h * w, h, w, su, sv);
        const std::size_t i = r * w + col;
        res.uv[2 * i] = params.zoom * (map.cos_t * fu - map.sin_t * fv);
        res.uv[2 * i + 1] = params.zoom * (map.sin_t * fu + map.cos_t * fv);
        res.valid[i] = f.valid[nearest_index(h, w, su, sv)];
      }
    }
    out.flows.push_back(std::move(res));
  }

  for (const Tensor& d : in.depths) {
    if (identity) {
      out.depths.push_back(d);
      continue;
    }
    const std::size_t h = d.dim(0), w = d.dim(1);
    Tensor res({h, w});
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        double su, sv;
        map.source(static_cast<double>(col), static_cast<double>(r), su, sv);
        res[r * w + col] = d[nearest_index(h, w, su, sv)];
      }
    }
    out.depths.push_back(std::move(res));
  }

  // Camera-to-world of the rolled camera: X_world = T X_orig = T Q^-1 X_aug.
  const geometry::Transform roll_inv = geometry::invert(camera_roll(params));
  for (const auto& pose : in.poses) out.poses.push_back(identity ? pose : pose * roll_inv);
  return out;
}

std::vector<data::Snippet> augment(const std::vector<data::Snippet>& batch, std::uint64_t seed,
                                   const AugmentSpec& spec) {
  std::mt19937_64 rng(seed);
  std::vector<data::Snippet> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(apply(s, draw(rng, spec)));
  return out;
}

}  // namespace seqvo::augment
