#include "hvq/image.hpp"

#include <algorithm>
#include <cmath>

namespace hvq {

Mat resize_bilinear(const Mat& src, int out_h, int out_w) {
  require_config(src.rows() > 0 && src.cols() > 0, "resize_bilinear: empty input");
  require_config(out_h > 0 && out_w > 0, "resize_bilinear: bad output size");
  const int in_h = static_cast<int>(src.rows());
  const int in_w = static_cast<int>(src.cols());
  Mat dst(out_h, out_w);
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      dst(r, c) = (1 - wy) * ((1 - wx) * src(y0, x0) + wx * src(y0, x1)) +
                  wy * ((1 - wx) * src(y1, x0) + wx * src(y1, x1));
    }
  }
  return dst;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image out(out_h, out_w);
  for (int c = 0; c < 3; ++c) out.chan[c] = resize_bilinear(src.chan[c], out_h, out_w);
  return out;
}

namespace {

// reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

Mat gaussian_blur(const Mat& src, double sigma) {
  require_config(sigma > 0.0, "gaussian_blur: sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  Vec kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel(i + radius) = std::exp(-0.5 * (i * i) / (sigma * sigma));
  kernel /= kernel.sum();

  const int h = static_cast<int>(src.rows());
  const int w = static_cast<int>(src.cols());
  Mat tmp(h, w), dst(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel(i + radius) * src(r, reflect(c + i, w));
      tmp(r, c) = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel(i + radius) * tmp(reflect(r + i, h), c);
      dst(r, c) = acc;
    }
  }
  return dst;
}

}  // namespace hvq
