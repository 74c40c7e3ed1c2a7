#pragma once

#include "hvq/common.hpp"

namespace hvq {

/// Entropic coupling between N image tokens and K prototypes, with the cost
/// matrix it was solved against. Row marginals are 1/N, column marginals 1/K.
struct TransportPlan {
  Mat plan;  // N x K, nonnegative, sums to 1
  Mat cost;  // N x K, nonnegative
  double epsilon = 0.0;
  int iterations_used = 0;
  bool converged = false;
};

/// Pairwise Euclidean distances between token rows and prototype rows.
Mat cost_matrix(const Mat& tokens, const Mat& entries);

/// Log-domain Sinkhorn for min <M,C> + eps * sum M ln M with uniform
/// marginals (1/N rows, 1/K columns). Stops when the max marginal violation
/// drops below tol or max_iter is reached; non-convergence only clears the
/// flag, it is not an error.
TransportPlan sinkhorn(const Mat& cost, double epsilon, int max_iter = 100,
                       double tol = 1e-6);

/// <M*, C> + sum M* ln M* with 0 ln 0 := 0.
double pot_loss(const TransportPlan& plan);

/// Row-wise transport cost: s[i] = sum_j M*[i,j] * C[i,j].
Vec pot_score(const TransportPlan& plan);

}  // namespace hvq
