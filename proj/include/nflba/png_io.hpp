#pragma once

#include <string>

#include "nflba/common.hpp"

namespace nflba {

// 8-bit RGB image file. Values are clamped to [0, 1] and quantized to 255
// levels on write; reads return values / 255.
void write_png_rgb8(const std::string& path, const Image3& image);
Image3 read_png_rgb8(const std::string& path);

// 16-bit grayscale depth file. Stored sample = round(value / scale), so the
// round trip is exact to scale / 2.
void write_png_gray16(const std::string& path, const Image1& values, double scale);
Image1 read_png_gray16(const std::string& path, double scale);

}  // namespace nflba
