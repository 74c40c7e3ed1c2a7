#pragma once

#include <string>

#include "hvq/image.hpp"

namespace hvq {

/// 8-bit PNG round trip for RGB images ([0,1] floats internally) and
/// single-channel matrices. Writes are deterministic for identical pixels.
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

void save_png_gray(const std::string& path, const Mat& gray01);
Mat load_png_gray(const std::string& path);

}  // namespace hvq
