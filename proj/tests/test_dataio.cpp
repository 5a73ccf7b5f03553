#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "seqvo/augment.hpp"
#include "seqvo/dataio.hpp"
#include "seqvo/errors.hpp"
#include "seqvo/eval.hpp"
#include "seqvo/image_io.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/synth.hpp"
#include "seqvo/view_synthesis.hpp"
#include "test_util.hpp"

using namespace seqvo;
using geometry::Transform;
using seqvo::testing::Rng;
using seqvo::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Mean absolute photometric error of warping `source` into `target` over
// pixels that land inside the source image.
double warp_error(const Tensor& target, const Tensor& source, const Tensor& depth, const Transform& t2s,
                  const geometry::Intrinsics& k) {
  const std::size_t H = target.dim(1), W = target.dim(2);
  const std::vector<Transform> ts{t2s};
  const std::vector<geometry::Intrinsics> ks{k};
  const auto corr = view::correspondence(depth.reshaped({1, 1, H, W}), ts, ks);
  const Tensor warped = view::bilinear_sample(source.reshaped({1, 3, H, W}), corr.coords);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < H * W; ++i) {
    const double u = corr.coords[i], v = corr.coords[H * W + i];
    if (corr.valid[i] == 0.0 || u < 0 || v < 0 || u > static_cast<double>(W - 1) || v > static_cast<double>(H - 1)) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) sum += std::abs(warped[ch * H * W + i] - target[ch * H * W + i]);
    ++n;
  }
  return sum / static_cast<double>(3 * n);
}

}  // namespace

TEST(Poses, ParseIdentityLine) {
  const auto poses = data::parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 2 0 1 0 3 0 0 1 4\n");
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].matrix(), Eigen::Matrix4d::Identity());
  EXPECT_EQ(poses[1].translation(), Eigen::Vector3d(2, 3, 4));
}

TEST(Poses, MalformedLinesNameTheLine) {
  try {
    data::parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n", "traj.txt");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("traj.txt:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(data::parse_poses("1 0 0 0 0 1 0 0 0 0 1 x\n"), ParseError);
  EXPECT_THROW(data::parse_poses("2 0 0 0 0 1 0 0 0 0 1 0\n"), GeometryError);
}

TEST(Poses, WriteLoadRoundTrip) {
  TempDir dir("poses");
  const auto ds = synth::synth_scene(3, 8, synth::MotionSpec{});
  data::write_poses(dir / "p.txt", *ds.gt_poses);
  const auto back = data::load_poses(dir / "p.txt");
  ASSERT_EQ(back.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_LT((back[i].matrix() - (*ds.gt_poses)[i].matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Intrinsics, Parse) {
  const auto k = data::parse_intrinsics("718.856 718.856 607.19 185.22\n");
  EXPECT_DOUBLE_EQ(k.fx, 718.856);
  EXPECT_DOUBLE_EQ(k.cy, 185.22);
  EXPECT_THROW(data::parse_intrinsics("1 2 3"), ParseError);
  EXPECT_THROW(data::parse_intrinsics("1 2 3 4 5"), ParseError);
  EXPECT_THROW(data::parse_intrinsics("-1 2 3 4"), ParseError);
}

TEST(Images, PpmDecodesToUnitRange) {
  TempDir dir("img");
  std::ofstream(dir / "red.ppm", std::ios::binary) << "P6\n2 1\n255\n" << '\xff' << '\0' << '\0' << '\0' << '\x80' << '\0';
  const Tensor img = io::load_image(dir / "red.ppm");
  EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(img.at({0, 0, 0}), 1.0);
  EXPECT_EQ(img.at({1, 0, 0}), 0.0);
  EXPECT_EQ(img.at({2, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(img.at({1, 0, 1}), 128.0 / 255.0);
}

TEST(Images, PngAndPpmAgree) {
  TempDir dir("img");
  Rng rng(1);
  Tensor img = rng.tensor({3, 5, 7}, 0, 1);
  io::write_png(dir / "a.png", img);
  io::write_ppm(dir / "a.ppm", img);
  const Tensor a = io::load_image(dir / "a.png");
  const Tensor b = io::load_image(dir / "a.ppm");
  EXPECT_EQ(a, b);
  for (double& v : img.data()) v = io::quantize8(v);
  EXPECT_LT(max_abs_diff(a, img), 1e-12);
}

TEST(Images, BadMagicNamesTheBytes) {
  TempDir dir("img");
  write_text(dir / "x.png", "GIF89a");
  try {
    io::load_image(dir / "x.png");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("0x47 0x49 0x46 0x38"), std::string::npos) << e.what();
  }
  EXPECT_THROW(io::load_image(dir / "none.png"), IoError);
}

TEST(Images, DepthPgmRoundTrip) {
  TempDir dir("img");
  Rng rng(2);
  Tensor d = rng.tensor({4, 6}, 0.5, 90);
  d[3] = 0.0;
  io::write_depth_pgm(dir / "d.pgm", d);
  EXPECT_EQ(read_bytes(dir / "d.pgm").size(), std::string("P5\n6 4\n65535\n").size() + 48);
  const Tensor back = io::read_depth_pgm(dir / "d.pgm");
  EXPECT_EQ(back[3], 0.0);
  EXPECT_LE(max_abs_diff(back, d), 0.5 / 256 + 1e-12);
  io::write_ppm(dir / "rgb.ppm", Tensor({3, 2, 2}));
  EXPECT_THROW(io::read_depth_pgm(dir / "rgb.ppm"), FormatError);
}

TEST(Synth, IdentityMotionGivesIdenticalFrames) {
  const auto ds = synth::synth_scene(4, 3, synth::MotionSpec::identity());
  EXPECT_EQ(ds.frames[0], ds.frames[1]);
  EXPECT_EQ(ds.frames[1], ds.frames[2]);
}

TEST(Synth, FixedPlaneHasConstantDepth) {
  synth::SceneOptions opt;
  opt.plane_depths = {5.0};
  const auto ds = synth::synth_scene(5, 2, synth::MotionSpec::identity(), opt);
  const Tensor& d = (*ds.gt_depths)[0];
  std::size_t at5 = 0;
  for (double v : d.data()) at5 += std::abs(v - 5.0) < 1e-12;
  EXPECT_GT(at5, d.size() / 20);
  for (double v : d.data()) EXPECT_GE(v, 5.0 - 1e-12);
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth::synth_scene(7, 4, synth::MotionSpec{});
  const auto b = synth::synth_scene(7, 4, synth::MotionSpec{});
  const auto c = synth::synth_scene(8, 4, synth::MotionSpec{});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.frames[i], b.frames[i]);
  EXPECT_NE(a.frames[0], c.frames[0]);
  for (double v : a.frames[0].data()) EXPECT_EQ(v, io::quantize8(v));
}

TEST(Synth, WarpIsSelfConsistent) {
  const auto ds = synth::synth_scene(7, 6, synth::MotionSpec{});
  const auto& poses = *ds.gt_poses;
  for (std::size_t t = 1; t < ds.size(); ++t) {
    const Transform t2s = geometry::invert(poses[t - 1]) * poses[t];
    EXPECT_LT(warp_error(ds.frames[t], ds.frames[t - 1], (*ds.gt_depths)[t], t2s, ds.intrinsics), 0.02);
  }
}

TEST(Motion, AccumulatedRelativeMotionReproducesPoses) {
  const auto ds = synth::synth_scene(9, 20, synth::MotionSpec{});
  const auto& poses = *ds.gt_poses;
  const auto rel = data::network_poses(poses);
  ASSERT_EQ(rel.size(), 19u);
  const auto acc = eval::accumulate(rel);
  const Transform origin = geometry::invert(poses[0]);
  for (std::size_t i = 0; i < poses.size(); ++i)
    EXPECT_LT((acc[i].matrix() - (origin * poses[i]).matrix()).cwiseAbs().maxCoeff(), 1e-9);
  const auto motion = data::relative_motion(poses);
  for (std::size_t i = 0; i < motion.size(); ++i)
    EXPECT_LT((motion[i].matrix() - geometry::invert(geometry::pose_to_transform(rel[i])).matrix()).cwiseAbs().maxCoeff(),
              1e-9);
}

TEST(Sequence, WriteLoadRoundTrip) {
  TempDir dir("seq");
  auto ds = synth::synth_scene(11, 4, synth::MotionSpec{});
  data::write_sequence(dir.path(), ds);
  EXPECT_TRUE(std::filesystem::exists(dir / "flow" / ds.id / "000001.flo"));
  EXPECT_TRUE(std::filesystem::exists(dir / "sequences" / ds.id / "depth" / "000003.pgm"));
  const auto back = data::load_sequence(dir.path(), ds.id);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.frames[i], ds.frames[i]);
  EXPECT_DOUBLE_EQ(back.intrinsics.fx, ds.intrinsics.fx);
  EXPECT_EQ(back.intrinsics.width, ds.width());
  ASSERT_TRUE(back.gt_poses && back.gt_depths);
  EXPECT_LE(max_abs_diff((*back.gt_depths)[2], (*ds.gt_depths)[2]), 0.5 / 256 + 1e-12);
  EXPECT_TRUE(std::holds_alternative<flow::FileFlowSource>(back.flow_source));
  const auto f0 = flow::flow_for(ds.flow_source, 2), f1 = flow::flow_for(back.flow_source, 2);
  double worst = 0.0;
  for (std::size_t i = 0; i < f0.valid.size(); ++i)
    if (f0.valid[i] != 0.0) worst = std::max(worst, std::abs(f0.uv[2 * i] - f1.uv[2 * i]));
  EXPECT_LT(worst, 1e-4);
  EXPECT_THROW(data::load_sequence(dir.path(), "absent"), IoError);
}

TEST(Sequence, SnippetsAndResize) {
  const auto ds = synth::synth_scene(12, 10, synth::MotionSpec{});
  const auto s = data::make_snippet(ds, 2, 5);
  EXPECT_EQ(s.length(), 5u);
  EXPECT_EQ(s.flows.size(), 5u);
  for (double v : s.flows[0].uv.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.images[0], ds.frames[2]);
  EXPECT_EQ(s.poses.size(), 5u);
  EXPECT_THROW(data::make_snippet(ds, 7, 5), ShapeError);
  const auto half = data::resized(ds, 16, 52);
  EXPECT_EQ(half.height(), 16u);
  EXPECT_DOUBLE_EQ(half.intrinsics.fx, ds.intrinsics.fx / 2);
  const auto hs = data::make_snippet(half, 0, 3);
  EXPECT_EQ(hs.flows[1].height(), 16u);
}

TEST(Augment, IdentityLeavesSnippetUnchanged) {
  const auto ds = synth::synth_scene(13, 4, synth::MotionSpec{});
  const auto s = data::make_snippet(ds, 0, 4);
  const auto a = augment::apply(s, augment::AugmentParams{});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LT(max_abs_diff(a.images[i], s.images[i]), 1e-12);
    EXPECT_LT(max_abs_diff(a.flows[i].uv, s.flows[i].uv), 1e-12);
  }
  EXPECT_DOUBLE_EQ(a.intrinsics.fx, s.intrinsics.fx);
}

TEST(Augment, ZoomScalesFocalLength) {
  const auto ds = synth::synth_scene(14, 3, synth::MotionSpec{});
  augment::AugmentParams p;
  p.zoom = 1.1;
  const auto a = augment::apply(data::make_snippet(ds, 0, 3), p);
  EXPECT_DOUBLE_EQ(a.intrinsics.fx, ds.intrinsics.fx * 1.1);
  EXPECT_DOUBLE_EQ(a.intrinsics.fy, ds.intrinsics.fy * 1.1);
  EXPECT_DOUBLE_EQ(a.intrinsics.cx, ds.intrinsics.cx);
}

// Augmented images, depth, intrinsics and poses still agree with each other.
TEST(Augment, PreservesPhotometricConsistency) {
  const auto ds = synth::synth_scene(15, 4, synth::MotionSpec{});
  const auto s = data::make_snippet(ds, 0, 4);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 3; ++trial) {
    auto p = augment::draw(rng, augment::AugmentSpec{});
    p.gain = {1.0, 1.0, 1.0};
    const auto a = augment::apply(s, p);
    for (std::size_t t = 1; t < 4; ++t) {
      const Transform t2s = geometry::invert(a.poses[t - 1]) * a.poses[t];
      const double before = warp_error(s.images[t], s.images[t - 1], s.depths[t], geometry::invert(s.poses[t - 1]) * s.poses[t], s.intrinsics);
      const double after = warp_error(a.images[t], a.images[t - 1], a.depths[t], t2s, a.intrinsics);
      EXPECT_LT(after, before + 0.005) << "trial " << trial << " frame " << t;
    }
  }
}

TEST(Augment, DrawsWithinRangesAndIsSeeded) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = augment::draw(rng, augment::AugmentSpec{});
    EXPECT_LE(std::abs(p.rotation), 5.0 * M_PI / 180 + 1e-12);
    EXPECT_GE(p.zoom, 1.0);
    EXPECT_LE(p.zoom, 1.15);
    for (double g : p.gain) {
      EXPECT_GE(g, 0.8);
      EXPECT_LE(g, 1.2);
    }
  }
  const auto ds = synth::synth_scene(16, 3, synth::MotionSpec{});
  const std::vector<data::Snippet> batch{data::make_snippet(ds, 0, 3)};
  EXPECT_EQ(augment::augment(batch, 5)[0].images[1], augment::augment(batch, 5)[0].images[1]);
}
