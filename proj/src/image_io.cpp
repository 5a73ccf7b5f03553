#include "seqvo/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "seqvo/errors.hpp"

namespace seqvo::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string describe_magic(const std::vector<unsigned char>& bytes) {
  std::ostringstream s;
  s << std::hex;
  for (std::size_t i = 0; i < std::min<std::size_t>(4, bytes.size()); ++i) {
    s << (i ? " " : "") << "0x" << static_cast<int>(bytes[i]);
  }
  return s.str();
}

Tensor decode_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  png_uint_32 w = 0, h = 0;
  int channels = 0, depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const double maxval = depth == 16 ? 65535.0 : 255.0;
  const int color_channels = channels >= 3 ? 3 : 1;
  Tensor out({3, h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (int k = 0; k < 3; ++k) {
        const int src = color_channels == 3 ? k : 0;
        const std::size_t idx = c * static_cast<std::size_t>(channels) + static_cast<std::size_t>(src);
        double v;
        if (depth == 16) {
          const unsigned char* p = rows[r] + 2 * idx;
          v = static_cast<double>(p[0] | (p[1] << 8));
        } else {
          v = rows[r][idx];
        }
        out[(static_cast<std::size_t>(k) * h + r) * w + c] = v / maxval;
      }
    }
  }
  return out;
}

struct Netpbm {
  char kind;
  std::size_t width, height, maxval;
  std::size_t offset;
};

Netpbm parse_netpbm_header(const std::vector<unsigned char>& b, const std::string& name) {
  std::size_t pos = 2;
  auto next_number = [&]() {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError(name + ": malformed netpbm header");
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + static_cast<std::size_t>(b[pos++] - '0');
    return v;
  };
  Netpbm h{static_cast<char>(b[1]), 0, 0, 0, 0};
  h.width = next_number();
  h.height = next_number();
  h.maxval = next_number();
  if (h.width == 0 || h.height == 0 || h.maxval == 0 || h.maxval > 65535) {
    throw FormatError(name + ": invalid netpbm dimensions or maxval");
  }
  h.offset = pos + 1;  // single whitespace after maxval
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  const std::size_t bytes = h.maxval > 255 ? 2 : 1;
  if (b.size() < h.offset + h.width * h.height * channels * bytes) throw FormatError(name + ": truncated netpbm data");
  return h;
}

std::size_t netpbm_sample(const std::vector<unsigned char>& b, const Netpbm& h, std::size_t i) {
  if (h.maxval > 255) return (static_cast<std::size_t>(b[h.offset + 2 * i]) << 8) | b[h.offset + 2 * i + 1];
  return b[h.offset + i];
}

Tensor decode_netpbm(const std::vector<unsigned char>& b, const std::string& name) {
  const Netpbm h = parse_netpbm_header(b, name);
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  const double maxval = static_cast<double>(h.maxval);
  Tensor out({3, h.height, h.width});
  const std::size_t n = h.width * h.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t src = channels == 3 ? i * 3 + k : i;
      out[k * n + i] = static_cast<double>(netpbm_sample(b, h, src)) / maxval;
    }
  }
  return out;
}

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("expected a 3 x H x W image, got " + to_string(image.shape()));
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(quantize8(v) * 255.0 + 0.5); }

}  // namespace

double quantize8(double v) { return std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5) / 255.0; }

Tensor load_image(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  static const unsigned char kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPng, kPng + 8, bytes.begin())) return decode_png(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_netpbm(bytes, path.string());
  }
  throw FormatError(path.string() + ": unsupported image format (magic bytes " + describe_magic(bytes) + ")");
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  check_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> buffer(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t k = 0; k < 3; ++k) buffer[i * 3 + k] = to_byte(image[k * h * w + i]);
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = buffer.data() + r * w * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  check_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t k = 0; k < 3; ++k) out.put(static_cast<char>(to_byte(image[k * h * w + i])));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_depth_pgm(const std::filesystem::path& path, const Tensor& depth) {
  if (depth.rank() != 2) throw ShapeError("depth PGM expects H x W, got " + to_string(depth.shape()));
  const std::size_t h = depth.dim(0), w = depth.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n65535\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    const double d = depth[i];
    const double q = std::isfinite(d) && d > 0.0 ? std::min(65535.0, std::floor(d * 256.0 + 0.5)) : 0.0;
    const auto v = static_cast<unsigned>(q);
    out.put(static_cast<char>(v >> 8));
    out.put(static_cast<char>(v & 0xff));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_depth_pgm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw FormatError(path.string() + ": depth maps must be binary PGM (magic bytes " + describe_magic(bytes) + ")");
  }
  const Netpbm h = parse_netpbm_header(bytes, path.string());
  if (h.maxval <= 255) throw FormatError(path.string() + ": depth PGM must be 16-bit");
  Tensor out({h.height, h.width});
  for (std::size_t i = 0; i < h.width * h.height; ++i) out[i] = static_cast<double>(netpbm_sample(bytes, h, i)) / 256.0;
  return out;
}

}  // namespace seqvo::io
