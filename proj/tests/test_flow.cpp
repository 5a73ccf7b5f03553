#include <gtest/gtest.h>

#include <fstream>

#include "seqvo/errors.hpp"
#include "seqvo/flow.hpp"
#include "seqvo/view_synthesis.hpp"
#include "test_util.hpp"

using namespace seqvo;
using namespace seqvo::flow;
using geometry::Intrinsics;
using geometry::Transform;
using seqvo::testing::Rng;
using seqvo::testing::TempDir;

namespace {

Intrinsics small_k() {
  Intrinsics k;
  k.fx = k.fy = 40;
  k.cx = 11.5;
  k.cy = 7.5;
  k.width = 24;
  k.height = 16;
  return k;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Flo, RoundTripWithInvalidPixels) {
  TempDir dir("flo");
  Rng rng(1);
  FlowField f{rng.tensor({3, 4, 2}, -20, 20), Tensor({3, 4}, 1.0)};
  for (double& v : f.uv.data()) v = static_cast<float>(v);
  f.valid[5] = 0.0;
  write_flo(dir / "a.flo", f);
  const FlowField g = read_flo(dir / "a.flo");
  EXPECT_EQ(g.height(), 3u);
  EXPECT_EQ(g.width(), 4u);
  EXPECT_EQ(g.valid[5], 0.0);
  EXPECT_EQ(g.uv[10], 0.0);
  for (std::size_t i = 0; i < 12; ++i) {
    if (i == 5) continue;
    EXPECT_EQ(g.valid[i], 1.0);
    EXPECT_EQ(g.uv[2 * i], f.uv[2 * i]);
    EXPECT_EQ(g.uv[2 * i + 1], f.uv[2 * i + 1]);
  }
}

TEST(Flo, ByteLayout) {
  TempDir dir("flo");
  write_flo(dir / "z.flo", FlowField::zeros(2, 2));
  const auto bytes = read_bytes(dir / "z.flo");
  ASSERT_EQ(bytes.size(), 44u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PIEH");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 2);
}

TEST(Flo, MalformedFilesAreRejected) {
  TempDir dir("flo");
  write_flo(dir / "ok.flo", FlowField::zeros(2, 2));
  auto bytes = read_bytes(dir / "ok.flo");

  auto bad = bytes;
  bad[0] = bad[1] = bad[2] = bad[3] = 0;
  write_bytes(dir / "magic.flo", bad);
  EXPECT_THROW(read_flo(dir / "magic.flo"), FormatError);

  bad = bytes;
  bad.resize(30);
  write_bytes(dir / "short.flo", bad);
  try {
    read_flo(dir / "short.flo");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  write_bytes(dir / "tiny.flo", {'P', 'I'});
  EXPECT_THROW(read_flo(dir / "tiny.flo"), FormatError);
  EXPECT_THROW(read_flo(dir / "absent.flo"), IoError);
}

TEST(SyntheticFlow, IdentityMotionIsZero) {
  const Intrinsics k = small_k();
  SyntheticFlowSource src{{Tensor({16, 24}, 5.0), Tensor({16, 24}, 5.0)}, {Transform(), Transform()}, k};
  const FlowField f = flow_for(src, 1);
  for (double v : f.uv.data()) EXPECT_EQ(v, 0.0);
  for (double v : f.valid.data()) EXPECT_EQ(v, 1.0);
}

TEST(SyntheticFlow, MatchesClosedFormAndRigidFlow) {
  const Intrinsics k = small_k();
  // Camera moves 0.1 along +x between frames; a plane at depth 4 shifts by
  // fx * 0.1 / 4 = 1 pixel to the right when looking back at frame t-1.
  const std::vector<Transform> poses{Transform(), Transform::translation(0.1, 0, 0)};
  SyntheticFlowSource src{{Tensor({16, 24}, 4.0), Tensor({16, 24}, 4.0)}, poses, k};
  const FlowField f = flow_for(src, 1);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c + 1 < 24; ++c) {
      const std::size_t i = r * 24 + c;
      ASSERT_EQ(f.valid[i], 1.0);
      EXPECT_NEAR(f.uv[2 * i], 1.0, 1e-12);
      EXPECT_NEAR(f.uv[2 * i + 1], 0.0, 1e-12);
    }
  const FlowField g = view::rigid_flow(src.depths[1], geometry::invert(poses[0]) * poses[1], k);
  EXPECT_EQ(f.uv, g.uv);
  EXPECT_EQ(f.valid, g.valid);
  EXPECT_THROW(flow_for(src, 0), Error);
  EXPECT_THROW(flow_for(src, 2), Error);
}

TEST(FileFlow, ReadsTheFrameFile) {
  TempDir dir("flow");
  Rng rng(2);
  FlowField f{rng.tensor({2, 3, 2}, -1, 1), Tensor({2, 3}, 1.0)};
  for (double& v : f.uv.data()) v = static_cast<float>(v);
  write_flo(flo_path(dir.path(), 4), f);
  EXPECT_EQ(flo_path(dir.path(), 4).filename(), "000004.flo");
  const FileFlowSource src{dir.path()};
  EXPECT_EQ(flow_for(src, 4).uv, f.uv);
  try {
    flow_for(src, 5);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 5"), std::string::npos) << e.what();
  }
}

TEST(FlowField, ResizeRescalesDisplacements) {
  FlowField f = FlowField::zeros(4, 6);
  for (std::size_t i = 0; i < 24; ++i) {
    f.uv[2 * i] = 3.0;
    f.uv[2 * i + 1] = -2.0;
  }
  const FlowField g = f.resized(8, 3);
  EXPECT_EQ(g.height(), 8u);
  EXPECT_EQ(g.width(), 3u);
  for (std::size_t i = 0; i < 24; ++i) {
    EXPECT_NEAR(g.uv[2 * i], 1.5, 1e-12);
    EXPECT_NEAR(g.uv[2 * i + 1], -4.0, 1e-12);
    EXPECT_EQ(g.valid[i], 1.0);
  }
  const Tensor chw = f.to_chw();
  EXPECT_EQ(chw.shape(), (Shape{2, 4, 6}));
  EXPECT_EQ(chw.at({0, 1, 2}), 3.0);
  EXPECT_EQ(chw.at({1, 3, 5}), -2.0);
}
