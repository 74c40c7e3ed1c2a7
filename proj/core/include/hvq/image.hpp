#pragma once

#include <array>

#include "hvq/common.hpp"

namespace hvq {

/// Planar RGB image, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::array<Mat, 3> chan;  // each H x W

  Image() = default;
  Image(int h, int w) : height(h), width(w) {
    for (auto& c : chan) c = Mat::Zero(h, w);
  }
  bool empty() const { return height == 0 || width == 0; }
};

/// Bilinear resampling of a single channel to (out_h, out_w). Pixel centers
/// are aligned; a constant field stays constant.
Mat resize_bilinear(const Mat& src, int out_h, int out_w);

Image resize_bilinear(const Image& src, int out_h, int out_w);

/// Separable Gaussian blur with reflect-101 borders; kernel truncated at
/// 3 sigma and normalized, so constants are preserved.
Mat gaussian_blur(const Mat& src, double sigma);

}  // namespace hvq
