#include "hvq/codebook.hpp"

#include <cmath>
#include <limits>

namespace hvq {

Codebook::Codebook(int k, int c, int class_id_, int layer_id_, double decay_,
                   double laplace_eps_) {
  require_config(k > 0 && c > 0, "Codebook: K and C must be positive");
  require_config(decay_ > 0.0 && decay_ < 1.0, "Codebook: decay must be in (0,1)");
  require_config(laplace_eps_ >= 0.0, "Codebook: laplace_eps must be >= 0");
  entries = Mat::Zero(k, c);
  ema_cluster_size = Vec::Ones(k);
  ema_embed_sum = Mat::Zero(k, c);
  decay = decay_;
  laplace_eps = laplace_eps_;
  class_id = class_id_;
  layer_id = layer_id_;
}

void Codebook::init_from_tokens(const Mat& tokens, Rng& rng) {
  require_config(tokens.cols() == entries.cols(),
                 "Codebook::init_from_tokens: width mismatch");
  require_input(tokens.rows() > 0, "Codebook::init_from_tokens: no tokens");
  const int n = static_cast<int>(tokens.rows());
  for (int k = 0; k < size(); ++k) {
    entries.row(k) = tokens.row(rng.uniform_int(0, n - 1));
  }
  // accumulators consistent with the fresh entries: one unit of mass each
  ema_cluster_size.setOnes();
  ema_embed_sum = entries;
}

int Codebook::restart_dead(const std::vector<long>& epoch_counts,
                           const Mat& tokens, Rng& rng) {
  require_config(static_cast<int>(epoch_counts.size()) == size(),
                 "restart_dead: count vector size mismatch");
  if (tokens.rows() == 0) return 0;
  const int n = static_cast<int>(tokens.rows());
  int restarted = 0;
  for (int k = 0; k < size(); ++k) {
    if (epoch_counts[k] != 0) continue;
    entries.row(k) = tokens.row(rng.uniform_int(0, n - 1));
    ema_cluster_size(k) = 1.0;
    ema_embed_sum.row(k) = entries.row(k);
    ++restarted;
  }
  return restarted;
}

QuantizationResult quantize(const Mat& tokens, const Codebook& book) {
  require_config(tokens.cols() == book.entries.cols(),
                 "quantize: token width does not match codebook width");
  require_input(tokens.allFinite(), "quantize: non-finite tokens");

  const Eigen::Index n = tokens.rows();
  const Eigen::Index k = book.entries.rows();

  // argmin via the expansion ||t||^2 - 2 t.e + ||e||^2 (one gemm), then the
  // winning distance is recomputed directly so exact matches come out as 0.
  Vec e_sq = book.entries.rowwise().squaredNorm();
  Mat cross = tokens * book.entries.transpose();  // N x K

  QuantizationResult res;
  res.quantized.resize(n, tokens.cols());
  res.indices.resize(static_cast<size_t>(n));
  res.sq_distances.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t_sq = tokens.row(i).squaredNorm();
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = t_sq - 2.0 * cross(i, j) + e_sq(j);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    res.indices[static_cast<size_t>(i)] = best;
    res.quantized.row(i) = book.entries.row(best);
    res.sq_distances(i) = (tokens.row(i) - book.entries.row(best)).squaredNorm();
  }
  return res;
}

void ema_update(Codebook& book, const Mat& tokens,
                const std::vector<int>& indices) {
  require_config(tokens.cols() == book.entries.cols(),
                 "ema_update: token width mismatch");
  require_config(static_cast<Eigen::Index>(indices.size()) == tokens.rows(),
                 "ema_update: one index per token required");
  const int k = book.size();
  Vec counts = Vec::Zero(k);
  Mat sums = Mat::Zero(k, book.width());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= k)
      throw std::logic_error("ema_update: assignment index out of range");
    counts(idx) += 1.0;
    sums.row(idx) += tokens.row(static_cast<Eigen::Index>(i));
  }

  const double g = book.decay;
  book.ema_cluster_size = g * book.ema_cluster_size + (1.0 - g) * counts;
  book.ema_embed_sum = g * book.ema_embed_sum + (1.0 - g) * sums;

  const double total = book.ema_cluster_size.sum();
  const double eps = book.laplace_eps;
  for (int j = 0; j < k; ++j) {
    const double smoothed =
        (book.ema_cluster_size(j) + eps) * total / (total + k * eps);
    book.entries.row(j) = book.ema_embed_sum.row(j) / smoothed;
  }
}

UsageStats usage_stats(const std::vector<int>& indices, int k) {
  require_config(k > 0, "usage_stats: K must be positive");
  std::vector<long> counts(static_cast<size_t>(k), 0);
  for (int idx : indices) {
    if (idx < 0 || idx >= k)
      throw std::logic_error("usage_stats: index out of range");
    ++counts[static_cast<size_t>(idx)];
  }
  const double n = static_cast<double>(indices.size());
  UsageStats s;
  int dead = 0;
  double entropy = 0.0;
  for (long c : counts) {
    if (c == 0) {
      ++dead;
      continue;
    }
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  s.perplexity = indices.empty() ? 0.0 : std::exp(entropy);
  s.dead_fraction = static_cast<double>(dead) / static_cast<double>(k);
  return s;
}

}  // namespace hvq
