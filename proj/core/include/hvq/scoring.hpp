#pragma once

#include <string>
#include <vector>

#include "hvq/common.hpp"

namespace hvq {

/// Per-patch anomaly scores with their upsampled, smoothed pixel map and the
/// image-level scalar (max over the pixel map).
struct ScoreMap {
  Vec patch_scores;
  Mat pixel_map;
  double image_score = 0.0;
};

/// Point-wise squared L2 reconstruction error per token row.
Vec recon_score(const Mat& h0, const Mat& h0_tilde);

/// s_org + lambda * sum over layers of the transport scores.
Vec calibrate(const Vec& s_org, const std::vector<Vec>& s_pot_layers,
              double lambda);

/// Reshape patch scores onto the token grid, bilinear-upsample to the image
/// resolution and Gaussian-smooth.
Mat pixel_map(const Vec& patch_scores, int grid_h, int grid_w, int image_h,
              int image_w, double smooth_sigma = 4.0);

ScoreMap make_score_map(const Vec& patch_scores, int grid_h, int grid_w,
                        int image_h, int image_w, double smooth_sigma = 4.0);

/// Mann-Whitney AUROC (ties count 1/2), computed by midranks. Requires both
/// classes present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Flat binary matrix file: magic "HVQM", u32 version, u32 rows, u32 cols,
/// u32 dtype (1 = float64 little-endian), then row-major payload.
void write_matrix_file(const std::string& path, const Mat& m);
Mat read_matrix_file(const std::string& path);

}  // namespace hvq
