#include "seqvo/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "seqvo/errors.hpp"
#include "seqvo/image_io.hpp"

namespace seqvo::synth {

using geometry::Intrinsics;
using geometry::Transform;

MotionSpec MotionSpec::parse(const std::string& text) {
  if (text.empty() || text == "default") return {};
  if (text == "identity") return identity();
  MotionSpec m;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ParseError("motion spec item without '=': " + item);
    const std::string key = item.substr(0, eq);
    double value = 0.0;
    try {
      value = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ParseError("motion spec value is not a number: " + item);
    }
    if (key == "forward") m.forward = value;
    else if (key == "sway") m.sway = value;
    else if (key == "bob") m.bob = value;
    else if (key == "yaw") m.yaw = value;
    else if (key == "period") m.period = value;
    else throw ParseError("unknown motion spec key: " + key);
  }
  if (!(m.period > 0.0)) throw ParseError("motion period must be positive");
  return m;
}

namespace {

class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

 private:
  std::mt19937_64 rng_;
};

struct Wave {
  double kx, ky;                 // cycles per meter
  std::array<double, 3> phase;   // per channel
  double amplitude;
};

struct Texture {
  std::array<double, 3> base;
  std::vector<Wave> waves;

  double channel(int c, double x, double y) const {
    double v = base[static_cast<std::size_t>(c)];
    for (const Wave& w : waves) {
      v += w.amplitude * std::sin(2.0 * std::numbers::pi * (w.kx * x + w.ky * y) + w.phase[static_cast<std::size_t>(c)]);
    }
    return std::clamp(v, 0.0, 1.0);
  }
};

struct Plane {
  double z;                      // world depth
  double x0, x1, y0, y1;         // extent; infinite for the background
  Texture texture;
};

Texture random_texture(Uniform& rnd, double ref_depth, double focal) {
  Texture t;
  for (double& b : t.base) b = rnd(0.25, 0.75);
  const int n = 3;
  for (int k = 0; k < n; ++k) {
    // Wavelength in pixels at the reference depth.
    const double wavelength_px = rnd(7.0, 18.0);
    const double cycles_per_m = focal / (wavelength_px * ref_depth);
    const double dir = rnd(0.0, 2.0 * std::numbers::pi);
    Wave w{cycles_per_m * std::cos(dir), cycles_per_m * std::sin(dir), {}, rnd(0.05, 0.09)};
    for (double& p : w.phase) p = rnd(0.0, 2.0 * std::numbers::pi);
    t.waves.push_back(w);
  }
  return t;
}

std::vector<Plane> random_layout(Uniform& rnd, const SceneOptions& o, double travel) {
  const std::size_t count = o.plane_depths.empty() ? 2 + rnd.index(3) : o.plane_depths.size();
  // Distinct depths: split [8, 22] into `count` bands and jitter within each.
  std::vector<Plane> planes;
  const double lo = 8.0, hi = 22.0, band = (hi - lo) / static_cast<double>(count);
  const double half_w = 0.5 * static_cast<double>(o.width) / o.focal;
  const double half_h = 0.5 * static_cast<double>(o.height) / o.focal;
  for (std::size_t k = 0; k < count; ++k) {
    Plane p;
    p.z = lo + band * (static_cast<double>(k) + rnd(0.15, 0.85));
    if (!o.plane_depths.empty()) p.z = o.plane_depths[k];
    const double view_w = half_w * (p.z - 0.5 * travel);
    const double view_h = half_h * (p.z - 0.5 * travel);
    const double width = rnd(0.35, 0.8) * view_w;
    const double cx = rnd(-0.9, 0.9) * view_w;
    const double height = rnd(0.6, 1.2) * view_h;
    const double cy = rnd(-0.4, 0.4) * view_h;
    p.x0 = cx - width;
    p.x1 = cx + width;
    p.y0 = cy - height;
    p.y1 = cy + height;
    p.texture = random_texture(rnd, p.z - 0.5 * travel, o.focal);
    planes.push_back(p);
  }
  Plane bg;
  bg.z = 60.0;
  bg.x0 = bg.y0 = -std::numeric_limits<double>::infinity();
  bg.x1 = bg.y1 = std::numeric_limits<double>::infinity();
  bg.texture = random_texture(rnd, bg.z, o.focal);
  planes.push_back(bg);
  return planes;
}

}  // namespace

data::SequenceDataset synth_scene(std::uint64_t seed, std::size_t n_frames, const MotionSpec& m,
                                  const SceneOptions& o) {
  if (n_frames < 2) throw ShapeError("synth_scene needs at least 2 frames");
  Uniform rnd(seed);
  const double travel = m.forward * static_cast<double>(n_frames - 1);
  const std::vector<Plane> planes = random_layout(rnd, o, travel);
  const double phase_x = rnd(0.0, 2.0 * std::numbers::pi);
  const double phase_y = rnd(0.0, 2.0 * std::numbers::pi);
  const double phase_yaw = rnd(0.0, 2.0 * std::numbers::pi);

  Intrinsics k;
  k.fx = k.fy = o.focal;
  k.cx = 0.5 * static_cast<double>(o.width) - 0.5;
  k.cy = 0.5 * static_cast<double>(o.height) - 0.5;
  k.width = o.width;
  k.height = o.height;
  k.validate();

  data::SequenceDataset ds;
  ds.id = "synth" + std::to_string(seed);
  ds.intrinsics = k;
  std::vector<Transform> poses;
  std::vector<Tensor> depths;
  const double w = 2.0 * std::numbers::pi / m.period;
  const std::size_t H = o.height, W = o.width;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const double fi = static_cast<double>(i);
    geometry::Pose6 p;
    p.ry = m.yaw * std::sin(w * fi + phase_yaw);
    p.tx = m.sway * std::sin(w * fi + phase_x);
    p.ty = m.bob * std::sin(2.0 * w * fi + phase_y);
    p.tz = m.forward * fi;
    const Transform cam_to_world = geometry::pose_to_transform(p);
    const auto rt = geometry::to_row_major_3x4(cam_to_world);
    const Eigen::Matrix3d R = cam_to_world.rotation();
    const Eigen::Vector3d origin = cam_to_world.translation();

    Tensor image({3, H, W});
    Tensor depth({H, W});
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const Eigen::Vector3d ray((static_cast<double>(c) - k.cx) / k.fx, (static_cast<double>(r) - k.cy) / k.fy, 1.0);
        const double dir_z = (R * ray).z();
        const Plane* hit = nullptr;
        double best = std::numeric_limits<double>::infinity();
        geometry::WarpedPoint best_point{};
        for (const Plane& pl : planes) {
          if (dir_z <= 0.0) break;
          // The camera-frame ray has unit z, so the ray parameter is the depth.
          const double s = (pl.z - origin.z()) / dir_z;
          if (!(s > 0.0) || s >= best) continue;
          const auto world = geometry::warp_point(static_cast<double>(c), static_cast<double>(r), s, rt.data(), k);
          if (world.x < pl.x0 || world.x > pl.x1 || world.y < pl.y0 || world.y > pl.y1) continue;
          best = s;
          hit = &pl;
          best_point = world;
        }
        if (!hit) throw GeometryError("synth_scene: pixel ray misses the background");
        depth[r * W + c] = best;
        for (int ch = 0; ch < 3; ++ch) {
          image[(static_cast<std::size_t>(ch) * H + r) * W + c] = io::quantize8(hit->texture.channel(ch, best_point.x, best_point.y));
        }
      }
    }
    ds.frames.push_back(std::move(image));
    depths.push_back(std::move(depth));
    poses.push_back(cam_to_world);
  }
  ds.gt_poses = poses;
  ds.gt_depths = depths;
  ds.flow_source = flow::SyntheticFlowSource{std::move(depths), std::move(poses), k};
  ds.validate();
  return ds;
}

}  // namespace seqvo::synth
