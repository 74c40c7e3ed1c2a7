#include "hvq/png_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace hvq {

namespace {
inline uint8_t to_u8(double v) {
  const double x = v * 255.0 + 0.5;
  return static_cast<uint8_t>(x < 0.0 ? 0.0 : (x > 255.0 ? 255.0 : x));
}
const std::vector<int> kPngParams = {cv::IMWRITE_PNG_COMPRESSION, 3};
}  // namespace

void save_png(const std::string& path, const Image& img) {
  require_input(!img.empty(), "save_png: empty image");
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < img.width; ++c) {
      row[c][2] = to_u8(img.chan[0](r, c));
      row[c][1] = to_u8(img.chan[1](r, c));
      row[c][0] = to_u8(img.chan[2](r, c));
    }
  }
  if (!cv::imwrite(path, bgr, kPngParams))
    throw InputError("save_png: cannot write " + path);
}

Image load_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("load_png: cannot read " + path);
  Image img(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      img.chan[0](r, c) = row[c][2] / 255.0;
      img.chan[1](r, c) = row[c][1] / 255.0;
      img.chan[2](r, c) = row[c][0] / 255.0;
    }
  }
  return img;
}

void save_png_gray(const std::string& path, const Mat& gray01) {
  require_input(gray01.size() > 0, "save_png_gray: empty matrix");
  cv::Mat g(static_cast<int>(gray01.rows()), static_cast<int>(gray01.cols()),
            CV_8UC1);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) g.at<uint8_t>(r, c) = to_u8(gray01(r, c));
  if (!cv::imwrite(path, g, kPngParams))
    throw InputError("save_png_gray: cannot write " + path);
}

Mat load_png_gray(const std::string& path) {
  cv::Mat g = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw InputError("load_png_gray: cannot read " + path);
  Mat out(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) out(r, c) = g.at<uint8_t>(r, c) / 255.0;
  return out;
}

}  // namespace hvq
