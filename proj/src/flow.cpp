#include "seqvo/flow.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seqvo/errors.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/view_synthesis.hpp"

namespace seqvo {

FlowField FlowField::zeros(std::size_t height, std::size_t width) {
  return {Tensor({height, width, 2}), Tensor({height, width}, 1.0)};
}

Tensor FlowField::to_chw() const {
  const std::size_t H = height(), W = width();
  Tensor out({2, H, W});
  for (std::size_t i = 0; i < H * W; ++i) {
    out[i] = uv[2 * i];
    out[H * W + i] = uv[2 * i + 1];
  }
  return out;
}

FlowField FlowField::resized(std::size_t h, std::size_t w) const {
  if (h == height() && w == width()) return *this;
  const double sx = static_cast<double>(w) / static_cast<double>(width());
  const double sy = static_cast<double>(h) / static_cast<double>(height());
  const Tensor chw = ad::resize_bilinear(to_chw(), h, w);
  const Tensor mask = ad::resize_bilinear(valid.reshaped({1, height(), width()}), h, w);
  FlowField out{Tensor({h, w, 2}), Tensor({h, w})};
  for (std::size_t i = 0; i < h * w; ++i) {
    out.uv[2 * i] = chw[i] * sx;
    out.uv[2 * i + 1] = chw[h * w + i] * sy;
    // A resized pixel is valid only if every contributing source pixel was.
    out.valid[i] = mask[i] >= 1.0 - 1e-9 ? 1.0 : 0.0;
  }
  return out;
}

namespace flow {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

void write_flo(const std::filesystem::path& path, const FlowField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  put_f32(out, kFloMagic);
  put_u32(out, static_cast<std::uint32_t>(f.width()));
  put_u32(out, static_cast<std::uint32_t>(f.height()));
  for (std::size_t i = 0; i < f.height() * f.width(); ++i) {
    const bool ok = f.valid[i] != 0.0;
    put_f32(out, ok ? static_cast<float>(f.uv[2 * i]) : 1e10f);
    put_f32(out, ok ? static_cast<float>(f.uv[2 * i + 1]) : 1e10f);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw FormatError(path.string() + ": truncated .flo header");
  if (get_f32(bytes.data()) != kFloMagic) throw FormatError(path.string() + ": bad .flo magic");
  const std::size_t w = get_u32(bytes.data() + 4);
  const std::size_t h = get_u32(bytes.data() + 8);
  if (w == 0 || h == 0) throw FormatError(path.string() + ": empty .flo dimensions");
  const std::size_t need = 12 + w * h * 8;
  if (bytes.size() < need) {
    throw FormatError(path.string() + ": truncated .flo payload, expected " + std::to_string(need) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  FlowField f{Tensor({h, w, 2}), Tensor({h, w})};
  const unsigned char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < h * w; ++i, p += 8) {
    const float u = get_f32(p), v = get_f32(p + 4);
    if (std::isfinite(u) && std::isfinite(v) && std::abs(u) <= kFloUnknown && std::abs(v) <= kFloUnknown) {
      f.uv[2 * i] = u;
      f.uv[2 * i + 1] = v;
      f.valid[i] = 1.0;
    }
  }
  return f;
}

std::filesystem::path flo_path(const std::filesystem::path& dir, std::size_t frame) {
  std::ostringstream name;
  name << std::setw(6) << std::setfill('0') << frame << ".flo";
  return dir / name.str();
}

FlowField flow_for(const FlowSource& source, std::size_t t) {
  if (t == 0) throw ShapeError("flow_for: frame 0 has no predecessor");
  if (const auto* file = std::get_if<FileFlowSource>(&source)) {
    const auto path = flo_path(file->dir, t);
    if (!std::filesystem::exists(path)) {
      throw IoError("missing flow for frame " + std::to_string(t) + ": " + path.string());
    }
    return read_flo(path);
  }
  const auto& syn = std::get<SyntheticFlowSource>(source);
  if (t >= syn.depths.size() || t >= syn.poses.size()) {
    throw ShapeError("flow_for: frame " + std::to_string(t) + " is past the end of the sequence");
  }
  const geometry::Transform target_to_source = geometry::invert(syn.poses[t - 1]) * syn.poses[t];
  return view::rigid_flow(syn.depths[t], target_to_source, syn.intrinsics);
}

}  // namespace flow
}  // namespace seqvo
