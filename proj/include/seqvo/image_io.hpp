#pragma once

#include <filesystem>

#include "seqvo/tensor.hpp"

namespace seqvo::io {

// Decodes PNG (8/16-bit gray, gray+alpha, RGB, RGBA) or binary PPM (P6) /
// PGM (P5) into 3 x H x W reals on [0, 1]. Gray images are replicated to
// three channels. The format is chosen from the magic bytes.
Tensor load_image(const std::filesystem::path& path);

// Writes 3 x H x W on [0, 1], quantized to 8 bits with rounding.
void write_png(const std::filesystem::path& path, const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// Round-half-up 8-bit quantization used by the writers.
double quantize8(double v);

// 16-bit big-endian PGM depth: stored value / 256 = meters, 0 = missing.
// Depths are rounded to the nearest 1/256 m and clamped to 65535/256.
void write_depth_pgm(const std::filesystem::path& path, const Tensor& depth);
Tensor read_depth_pgm(const std::filesystem::path& path);

}  // namespace seqvo::io
