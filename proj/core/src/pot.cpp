#include "hvq/pot.hpp"

#include <cmath>

namespace hvq {

Mat cost_matrix(const Mat& tokens, const Mat& entries) {
  require_config(tokens.cols() == entries.cols(),
                 "cost_matrix: token/prototype width mismatch");
  require_input(tokens.allFinite() && entries.allFinite(),
                "cost_matrix: non-finite input");
  // squared-distance expansion, clamped before the square root
  Vec t_sq = tokens.rowwise().squaredNorm();
  Vec e_sq = entries.rowwise().squaredNorm();
  Mat c = -2.0 * (tokens * entries.transpose());
  c.colwise() += t_sq;
  c.rowwise() += e_sq.transpose();
  return c.cwiseMax(0.0).cwiseSqrt();
}

namespace {

// u <- ln(a) - LSE_cols(logk + 1*v'), rowwise, in place
void row_update(const Mat& logk, const Vec& v, double log_a, Vec& u) {
  const Eigen::Index n = logk.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = logk.row(i).transpose().array() + v.array();
    const double m = row.maxCoeff();
    u(i) = log_a - (m + std::log((row - m).exp().sum()));
  }
}

void col_update(const Mat& logk, const Vec& u, double log_b, Vec& v) {
  const Eigen::Index k = logk.cols();
  for (Eigen::Index j = 0; j < k; ++j) {
    auto col = logk.col(j).array() + u.array();
    const double m = col.maxCoeff();
    v(j) = log_b - (m + std::log((col - m).exp().sum()));
  }
}

Mat plan_from_potentials(const Mat& logk, const Vec& u, const Vec& v) {
  Mat lp = logk;
  lp.colwise() += u;
  lp.rowwise() += v.transpose();
  return lp.array().exp().matrix();
}

double marginal_violation(const Mat& plan, double a, double b) {
  const double row_err = (plan.rowwise().sum().array() - a).abs().maxCoeff();
  const double col_err = (plan.colwise().sum().array() - b).abs().maxCoeff();
  return std::max(row_err, col_err);
}

}  // namespace

TransportPlan sinkhorn(const Mat& cost, double epsilon, int max_iter,
                       double tol) {
  require_config(epsilon > 0.0, "sinkhorn: epsilon must be positive");
  require_config(max_iter >= 1, "sinkhorn: max_iter must be >= 1");
  require_input(cost.allFinite() && cost.minCoeff() >= 0.0,
                "sinkhorn: cost must be finite and nonnegative");

  const Eigen::Index n = cost.rows();
  const Eigen::Index k = cost.cols();
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(k);
  const double log_a = std::log(a);
  const double log_b = std::log(b);

  Mat logk = (-cost / epsilon);
  Vec u = Vec::Zero(n), v = Vec::Zero(k);

  TransportPlan out;
  out.cost = cost;
  out.epsilon = epsilon;

  // marginal feasibility is checked periodically; the final plan uses the
  // last potentials either way
  constexpr int kCheckEvery = 5;
  Mat plan;
  int it = 0;
  bool converged = false;
  while (it < max_iter) {
    row_update(logk, v, log_a, u);
    col_update(logk, u, log_b, v);
    ++it;
    if (it % kCheckEvery == 0 || it == max_iter) {
      plan = plan_from_potentials(logk, u, v);
      if (marginal_violation(plan, a, b) < tol) {
        converged = true;
        break;
      }
    }
  }
  if (plan.size() == 0) plan = plan_from_potentials(logk, u, v);
  out.plan = std::move(plan);
  out.iterations_used = it;
  out.converged = converged || marginal_violation(out.plan, a, b) < tol;
  return out;
}

double pot_loss(const TransportPlan& plan) {
  const Mat& m = plan.plan;
  double transport = (m.cwiseProduct(plan.cost)).sum();
  double entropy_term = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double p = m(i, j);
      if (p > 0.0) entropy_term += p * std::log(p);
    }
  }
  return transport + entropy_term;
}

Vec pot_score(const TransportPlan& plan) {
  return plan.plan.cwiseProduct(plan.cost).rowwise().sum();
}

}  // namespace hvq
