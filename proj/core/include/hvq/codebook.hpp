#pragma once

#include <vector>

#include "hvq/common.hpp"
#include "hvq/rng.hpp"

namespace hvq {

/// Discrete prototype store for one (class, layer) pair, with the moving
/// averages that re-estimate the prototypes from assigned tokens.
struct Codebook {
  Mat entries;           // K x C prototypes
  Vec ema_cluster_size;  // K, elementwise >= 0
  Mat ema_embed_sum;     // K x C
  double decay = 0.99;
  double laplace_eps = 1e-5;
  int class_id = 0;
  int layer_id = 0;

  Codebook() = default;
  Codebook(int k, int c, int class_id, int layer_id, double decay = 0.99,
           double laplace_eps = 1e-5);

  int size() const { return static_cast<int>(entries.rows()); }
  int width() const { return static_cast<int>(entries.cols()); }

  /// Data-dependent (re)initialization: entries are sampled token rows,
  /// with replacement when fewer tokens than entries are available.
  void init_from_tokens(const Mat& tokens, Rng& rng);

  /// Re-seeds entries whose epoch assignment count is zero from random token
  /// rows. Off by default in training; exposed for ablation.
  int restart_dead(const std::vector<long>& epoch_counts, const Mat& tokens,
                   Rng& rng);
};

struct QuantizationResult {
  Mat quantized;                 // N x C, rows copied bit-identically from entries
  std::vector<int> indices;      // N, each in [0, K)
  Vec sq_distances;              // N, nonnegative
};

/// Nearest-prototype assignment under squared L2; ties break to the lowest
/// index. Read-only on the codebook.
QuantizationResult quantize(const Mat& tokens, const Codebook& book);

/// EMA re-estimation of the prototypes from tokens previously assigned by
/// quantize(). Laplace-smoothed normalization keeps empty clusters finite.
void ema_update(Codebook& book, const Mat& tokens,
                const std::vector<int>& indices);

struct UsageStats {
  double perplexity = 0.0;
  double dead_fraction = 0.0;
};

/// exp(entropy) of the empirical assignment distribution plus the fraction of
/// entries never selected. Diagnoses codebook collapse.
UsageStats usage_stats(const std::vector<int>& indices, int k);

}  // namespace hvq
