#pragma once

#include <functional>
#include <map>
#include <vector>

#include "hvq/common.hpp"
#include "hvq/rng.hpp"

namespace hvq::testutil {

/// Central finite differences of a scalar function over a flat input vector.
inline Vec finite_difference(const std::function<double(const Vec&)>& f,
                             const Vec& x0, double h = 1e-5) {
  Vec g(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Vec xp = x0, xm = x0;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const Vec& a, const Vec& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), floor});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

inline Vec flatten(const Mat& m) {
  Vec v(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) v(i) = m.data()[i];
  return v;
}

inline Mat unflatten(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < v.size(); ++i) m.data()[i] = v(i);
  return m;
}

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                      double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Exact optimal-transport cost for uniform marginals (1/N, 1/K) by
/// enumerating integral flows: scaling by N*K turns the problem into a
/// min-cost flow with supply K per row and demand N per column, which has an
/// integral optimum. Dynamic program over columns; exact for small N, K.
inline double exact_transport_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const int k = static_cast<int>(cost.cols());
  // state: remaining supply per row (each starts at k)
  std::map<std::vector<int>, double> front;
  front[std::vector<int>(n, k)] = 0.0;
  for (int col = 0; col < k; ++col) {
    std::map<std::vector<int>, double> next;
    // enumerate allocations of n units to rows, capped by remaining supply
    for (const auto& [state, base] : front) {
      std::vector<int> alloc(n, 0);
      std::function<void(int, int, double)> rec = [&](int row, int left,
                                                      double acc) {
        if (row == n - 1) {
          if (left > state[row]) return;
          alloc[row] = left;
          std::vector<int> ns = state;
          double add = acc + left * cost(row, col);
          for (int r = 0; r < n; ++r) ns[r] -= alloc[r];
          auto it = next.find(ns);
          const double total = base + add;
          if (it == next.end() || total < it->second) next[ns] = total;
          return;
        }
        for (int take = 0; take <= std::min(left, state[row]); ++take) {
          alloc[row] = take;
          rec(row + 1, left - take, acc + take * cost(row, col));
        }
      };
      rec(0, n, 0.0);
    }
    front = std::move(next);
  }
  // all supplies consumed
  const auto it = front.find(std::vector<int>(n, 0));
  return it->second / (static_cast<double>(n) * k);
}

/// O(n^2) pairwise-counting AUROC with ties worth 1/2.
inline double pairwise_auroc(const std::vector<double>& scores,
                             const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Independent restatement of the EMA recurrence with Laplace smoothing.
struct EmaOracle {
  Vec size;
  Mat sum;
  Mat entries;
};
inline EmaOracle ema_recurrence(const Vec& size0, const Mat& sum0,
                                double decay, double eps, const Mat& tokens,
                                const std::vector<int>& indices) {
  const int k = static_cast<int>(size0.size());
  const int c = static_cast<int>(sum0.cols());
  EmaOracle o;
  o.size = Vec::Zero(k);
  o.sum = Mat::Zero(k, c);
  Vec n_k = Vec::Zero(k);
  Mat s_k = Mat::Zero(k, c);
  for (size_t i = 0; i < indices.size(); ++i) {
    n_k(indices[i]) += 1.0;
    s_k.row(indices[i]) += tokens.row(static_cast<Eigen::Index>(i));
  }
  for (int j = 0; j < k; ++j) {
    o.size(j) = decay * size0(j) + (1.0 - decay) * n_k(j);
    o.sum.row(j) = decay * sum0.row(j) + (1.0 - decay) * s_k.row(j);
  }
  const double total = o.size.sum();
  o.entries = Mat::Zero(k, c);
  for (int j = 0; j < k; ++j) {
    const double smoothed = (o.size(j) + eps) * total / (total + k * eps);
    o.entries.row(j) = o.sum.row(j) / smoothed;
  }
  return o;
}

}  // namespace hvq::testutil
