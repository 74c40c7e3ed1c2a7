#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvq/common.hpp"
#include "hvq/image.hpp"
#include "hvq/rng.hpp"

namespace hvq {

/// One image with its class id, anomaly flag and (for anomalous test
/// samples) a pixel-level ground-truth mask. Pixels are stored as 8-bit
/// RGB; accessors expose the [0,1] real view.
struct LabeledSample {
  int height = 0, width = 0;
  std::vector<uint8_t> rgb;        // H*W*3 interleaved
  std::vector<uint8_t> mask_bits;  // H*W in {0,1}; empty when no mask
  int class_id = 0;
  int is_anomalous = 0;
  bool mask_missing = false;  // anomalous sample lacking ground truth
  std::string defect_kind = "good";

  Image image() const;
  Mat mask() const;  // empty Mat when no mask
  bool has_mask() const { return !mask_bits.empty(); }
  void set_image(const Image& img);
  void set_mask(const Mat& m);
};

struct Dataset {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  std::vector<std::string> class_names;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct SyntheticSpec {
  int classes = 3;
  int per_class = 200;      // normal training images per class
  int test_normal = 50;     // normal test images per class
  int test_anomalous = 50;  // anomalous test images per class
  int height = 224;
  int width = 224;
  std::vector<std::string> anomaly_kinds = {"transplant", "blob", "scramble"};
  uint64_t seed = 7;
};

/// Procedural multi-class texture corpus. Each class is a periodic pattern
/// family with its own frequencies, orientation and palette; anomalies are
/// cross-class patch transplants, out-of-palette blobs, or local pixel
/// scrambles, each with an exact mask covering 1-10% of the image.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Frozen random patch-embedding map from H x W x 3 pixels to a
/// (H/patch) x (W/patch) token grid of the given width.
struct BackboneStub {
  int patch = 16;
  int channels = 64;
  uint64_t seed = 0;
  Mat weight;  // C x (patch*patch*3)
  Vec bias;    // C

  static BackboneStub make(int channels, int patch, uint64_t seed);

  /// Tokens for one image, row-major over the patch grid. Requires spatial
  /// dims divisible by the patch size.
  Mat extract(const Image& img) const;
  int grid_h(int image_h) const { return image_h / patch; }
  int grid_w(int image_w) const { return image_w / patch; }
  /// Token grid produced for an all-zero image (constant across patches).
  Vec zero_response() const;
};

/// Writes `root/<class>/train/good`, `root/<class>/test/<defect|good>` and
/// `root/<class>/ground_truth/<defect>` PNG trees.
void write_mvtec_style(const Dataset& ds, const std::string& root);

/// Loads the layout written above (or any MVTec-style tree). Images are
/// resized to resize_hw x resize_hw; masks are binarized at 0.5. An
/// anomalous test image without ground truth is kept but flagged so pixel
/// metrics can skip it.
Dataset load_mvtec_style(const std::string& root, int resize_hw = 224);

}  // namespace hvq
