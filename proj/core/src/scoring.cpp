#include "hvq/scoring.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hvq/image.hpp"

namespace hvq {

Vec recon_score(const Mat& h0, const Mat& h0_tilde) {
  require_config(h0.rows() == h0_tilde.rows() && h0.cols() == h0_tilde.cols(),
                 "recon_score: shape mismatch");
  return (h0 - h0_tilde).rowwise().squaredNorm();
}

Vec calibrate(const Vec& s_org, const std::vector<Vec>& s_pot_layers,
              double lambda) {
  require_config(lambda >= 0.0, "calibrate: lambda must be >= 0");
  Vec out = s_org;
  for (const Vec& s : s_pot_layers) {
    require_config(s.size() == s_org.size(), "calibrate: layer score length mismatch");
    out += lambda * s;
  }
  return out;
}

Mat pixel_map(const Vec& patch_scores, int grid_h, int grid_w, int image_h,
              int image_w, double smooth_sigma) {
  require_config(static_cast<int>(patch_scores.size()) == grid_h * grid_w,
                 "pixel_map: patch count does not match grid");
  Mat grid(grid_h, grid_w);
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) grid(r, c) = patch_scores(r * grid_w + c);
  Mat up = resize_bilinear(grid, image_h, image_w);
  if (smooth_sigma > 0.0) up = gaussian_blur(up, smooth_sigma);
  return up;
}

ScoreMap make_score_map(const Vec& patch_scores, int grid_h, int grid_w,
                        int image_h, int image_w, double smooth_sigma) {
  ScoreMap sm;
  sm.patch_scores = patch_scores;
  sm.pixel_map =
      pixel_map(patch_scores, grid_h, grid_w, image_h, image_w, smooth_sigma);
  sm.image_score = sm.pixel_map.maxCoeff();
  return sm;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_config(scores.size() == labels.size(), "auroc: size mismatch");
  size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("auroc: needs both positive and negative labels");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over tie groups; rank sum of positives gives the U statistic
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t t = i; t <= j; ++t)
      if (labels[order[t]] != 0) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {
constexpr char kMagic[4] = {'H', 'V', 'Q', 'M'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kDtypeF64 = 1;
}  // namespace

void write_matrix_file(const std::string& path, const Mat& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("write_matrix_file: cannot open " + path);
  f.write(kMagic, 4);
  const uint32_t header[4] = {kVersion, static_cast<uint32_t>(m.rows()),
                              static_cast<uint32_t>(m.cols()), kDtypeF64};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  f.write(reinterpret_cast<const char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!f) throw InputError("write_matrix_file: write failed for " + path);
}

Mat read_matrix_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("read_matrix_file: cannot open " + path);
  char magic[4];
  uint32_t header[4];
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw InputError("read_matrix_file: bad magic in " + path);
  if (header[0] != kVersion || header[3] != kDtypeF64)
    throw InputError("read_matrix_file: unsupported version/dtype in " + path);
  Mat m(header[1], header[2]);
  f.read(reinterpret_cast<char*>(m.data()),
         static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!f) throw InputError("read_matrix_file: truncated file " + path);
  return m;
}

}  // namespace hvq
