#include "hvq/autodiff.hpp"

#include <cmath>

namespace hvq {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

void BufferGradSink::accumulate(Parameter& p, const Mat& g) {
  if (p.slot < 0 || static_cast<size_t>(p.slot) >= grads_.size()) {
    throw std::logic_error("BufferGradSink: parameter not registered: " + p.name);
  }
  Mat& dst = grads_[p.slot];
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

void BufferGradSink::flush_into_params(const std::vector<Parameter*>& params) const {
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads_[i].size() != 0) params[i]->grad += grads_[i];
  }
}

Graph::NodeId Graph::push(Mat value, bool needs_grad,
                          std::function<void(Graph&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Mat& Graph::grad_buf(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Graph::NodeId Graph::constant(Mat v) { return push(std::move(v), false, {}); }

Graph::NodeId Graph::input(Mat v) {
  return push(std::move(v), true, {});  // grad kept on the node itself
}

Graph::NodeId Graph::param(Parameter& p) {
  Parameter* pp = &p;
  NodeId id = push(p.value, true, {});
  nodes_[id].backprop = [id, pp](Graph& g) {
    GradSink* sink = g.sink_ ? g.sink_ : &g.direct_;
    sink->accumulate(*pp, g.nodes_[id].grad);
  };
  return id;
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  Mat v = value(a) + value(b);
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a) += go;
      if (g.needs(b)) g.grad_buf(b) += go;
    };
  }
  return id;
}

Graph::NodeId Graph::sub(NodeId a, NodeId b) {
  Mat v = value(a) - value(b);
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a) += go;
      if (g.needs(b)) g.grad_buf(b) -= go;
    };
  }
  return id;
}

Graph::NodeId Graph::cmul(NodeId a, NodeId b) {
  Mat v = value(a).cwiseProduct(value(b));
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a) += go.cwiseProduct(g.value(b));
      if (g.needs(b)) g.grad_buf(b) += go.cwiseProduct(g.value(a));
    };
  }
  return id;
}

Graph::NodeId Graph::scale(NodeId a, double s) {
  Mat v = value(a) * s;
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, s](Graph& g) {
      g.grad_buf(a) += g.nodes_[id].grad * s;
    };
  }
  return id;
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  require_config(value(a).cols() == value(b).rows(), "matmul: inner dims differ");
  Mat v = value(a) * value(b);
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a).noalias() += go * g.value(b).transpose();
      if (g.needs(b)) g.grad_buf(b).noalias() += g.value(a).transpose() * go;
    };
  }
  return id;
}

Graph::NodeId Graph::matmul_nt(NodeId a, NodeId b) {
  require_config(value(a).cols() == value(b).cols(), "matmul_nt: widths differ");
  Mat v = value(a) * value(b).transpose();
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a).noalias() += go * g.value(b);
      if (g.needs(b)) g.grad_buf(b).noalias() += go.transpose() * g.value(a);
    };
  }
  return id;
}

Graph::NodeId Graph::add_rowwise(NodeId a, NodeId row) {
  require_config(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
                 "add_rowwise: bias must be 1 x cols(a)");
  Mat v = value(a).rowwise() + value(row).row(0);
  bool ng = needs(a) || needs(row);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, row](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_buf(a) += go;
      if (g.needs(row)) g.grad_buf(row).row(0) += go.colwise().sum();
    };
  }
  return id;
}

Graph::NodeId Graph::affine(NodeId x, Parameter& w, Parameter& b) {
  return add_rowwise(matmul(x, param(w)), param(b));
}

Graph::NodeId Graph::concat_cols(NodeId a, NodeId b) {
  require_config(value(a).rows() == value(b).rows(), "concat_cols: row mismatch");
  Mat v(value(a).rows(), value(a).cols() + value(b).cols());
  v << value(a), value(b);
  bool ng = needs(a) || needs(b);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      const auto ca = g.value(a).cols();
      if (g.needs(a)) g.grad_buf(a) += go.leftCols(ca);
      if (g.needs(b)) g.grad_buf(b) += go.rightCols(go.cols() - ca);
    };
  }
  return id;
}

Graph::NodeId Graph::slice_cols(NodeId a, int col0, int ncols) {
  require_config(col0 >= 0 && col0 + ncols <= value(a).cols(),
                 "slice_cols: out of range");
  Mat v = value(a).middleCols(col0, ncols);
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, col0, ncols](Graph& g) {
      g.grad_buf(a).middleCols(col0, ncols) += g.nodes_[id].grad;
    };
  }
  return id;
}

Graph::NodeId Graph::mean_pool_rows(NodeId a) {
  const double inv_n = 1.0 / static_cast<double>(value(a).rows());
  Mat v = value(a).colwise().sum() * inv_n;
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, inv_n](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      g.grad_buf(a).rowwise() += (go.row(0) * inv_n).eval();
    };
  }
  return id;
}

Graph::NodeId Graph::gelu(NodeId a) {
  const Mat& x = value(a);
  Mat v = x.unaryExpr(
      [](double t) { return 0.5 * t * (1.0 + std::erf(t * kInvSqrt2)); });
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a](Graph& g) {
      const Mat& x = g.value(a);
      const Mat& go = g.nodes_[id].grad;
      Mat dx = x.unaryExpr([](double t) {
        const double cdf = 0.5 * (1.0 + std::erf(t * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * t * t);
        return cdf + t * pdf;
      });
      g.grad_buf(a) += go.cwiseProduct(dx);
    };
  }
  return id;
}

Graph::NodeId Graph::softmax_rows(NodeId a) {
  const Mat& x = value(a);
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    v.row(i) = (x.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a](Graph& g) {
      const Mat& y = g.nodes_[id].value;
      const Mat& go = g.nodes_[id].grad;
      Mat& ga = g.grad_buf(a);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = go.row(i).dot(y.row(i));
        ga.row(i) += (go.row(i).array() - dot).matrix().cwiseProduct(y.row(i));
      }
    };
  }
  return id;
}

Graph::NodeId Graph::layer_norm_rows(NodeId x, Parameter& gain, Parameter& bias,
                                     double eps) {
  const Eigen::Index n = value(x).rows(), c = value(x).cols();
  require_config(gain.value.cols() == c && bias.value.cols() == c,
                 "layer_norm_rows: affine width mismatch");
  NodeId g_id = param(gain);
  NodeId b_id = param(bias);
  const Mat& v = value(x);

  // normalized activations are cached for the backward pass
  auto xhat = std::make_shared<Mat>(n, c);
  auto inv_sigma = std::make_shared<Vec>(n);
  Mat out(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)(i) = is;
    xhat->row(i) = (v.row(i).array() - mu).matrix() * is;
    out.row(i) = xhat->row(i).cwiseProduct(value(g_id).row(0)) + value(b_id).row(0);
  }
  bool ng = needs(x) || needs(g_id) || needs(b_id);
  NodeId id = push(std::move(out), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, x, g_id, b_id, xhat, inv_sigma](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      const Eigen::Index n = go.rows();
      if (g.needs(g_id)) {
        g.grad_buf(g_id).row(0) += go.cwiseProduct(*xhat).colwise().sum();
      }
      if (g.needs(b_id)) g.grad_buf(b_id).row(0) += go.colwise().sum();
      if (g.needs(x)) {
        Mat& gx = g.grad_buf(x);
        const auto& gamma = g.value(g_id).row(0);
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::RowVectorXd dxhat = go.row(i).cwiseProduct(gamma);
          const double m1 = dxhat.mean();
          const double m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
          gx.row(i) +=
              ((dxhat.array() - m1 - xhat->row(i).array() * m2) * (*inv_sigma)(i))
                  .matrix();
        }
      }
    };
  }
  return id;
}

Graph::NodeId Graph::dropout(NodeId a, double rate) {
  if (!training_ || rate <= 0.0) return a;
  require_config(rate < 1.0, "dropout: rate must be < 1");
  const Mat& x = value(a);
  auto mask = std::make_shared<Mat>(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      (*mask)(i, j) = rng_.uniform() < keep ? 1.0 / keep : 0.0;
  Mat v = x.cwiseProduct(*mask);
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, mask](Graph& g) {
      g.grad_buf(a) += g.nodes_[id].grad.cwiseProduct(*mask);
    };
  }
  return id;
}

Graph::NodeId Graph::sum_sq(NodeId a) {
  Mat v(1, 1);
  v(0, 0) = value(a).squaredNorm();
  bool ng = needs(a);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a](Graph& g) {
      g.grad_buf(a) += 2.0 * g.nodes_[id].grad(0, 0) * g.value(a);
    };
  }
  return id;
}

Graph::NodeId Graph::cross_entropy_logits(NodeId logits, int label) {
  const Mat& z = value(logits);
  require_config(z.rows() == 1, "cross_entropy_logits: logits must be 1 x M");
  require_config(label >= 0 && label < z.cols(), "cross_entropy_logits: bad label");
  const double m = z.row(0).maxCoeff();
  Eigen::RowVectorXd p = (z.row(0).array() - m).exp();
  p /= p.sum();
  Mat v(1, 1);
  v(0, 0) = -std::log(std::max(p(label), 1e-300));
  bool ng = needs(logits);
  auto probs = std::make_shared<Eigen::RowVectorXd>(std::move(p));
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, logits, label, probs](Graph& g) {
      const double go = g.nodes_[id].grad(0, 0);
      Eigen::RowVectorXd d = *probs;
      d(label) -= 1.0;
      g.grad_buf(logits).row(0) += go * d;
    };
  }
  return id;
}

Graph::NodeId Graph::straight_through(NodeId x, const Mat& quantized) {
  require_config(quantized.rows() == value(x).rows() &&
                     quantized.cols() == value(x).cols(),
                 "straight_through: shape mismatch");
  bool ng = needs(x);
  NodeId id = push(quantized, ng, {});
  if (ng) {
    nodes_[id].backprop = [id, x](Graph& g) {
      g.grad_buf(x) += g.nodes_[id].grad;
    };
  }
  return id;
}

Graph::NodeId Graph::gather_rows(NodeId a, std::vector<int> indices) {
  const Mat& src = value(a);
  Mat v(static_cast<Eigen::Index>(indices.size()), src.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= src.rows())
      throw std::logic_error("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = src.row(indices[i]);
  }
  bool ng = needs(a);
  auto idx = std::make_shared<std::vector<int>>(std::move(indices));
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, a, idx](Graph& g) {
      const Mat& go = g.nodes_[id].grad;
      Mat& ga = g.grad_buf(a);
      for (size_t i = 0; i < idx->size(); ++i)
        ga.row((*idx)[i]) += go.row(static_cast<Eigen::Index>(i));
    };
  }
  return id;
}

Graph::NodeId Graph::transport_cost(const Mat& tokens, NodeId entries,
                                    const Mat& plan) {
  const Mat& e = value(entries);
  require_config(tokens.cols() == e.cols(), "transport_cost: width mismatch");
  require_config(plan.rows() == tokens.rows() && plan.cols() == e.rows(),
                 "transport_cost: plan shape mismatch");
  // distances are recomputed exactly (no gemm expansion) - N*K is small here
  auto dist = std::make_shared<Mat>(tokens.rows(), e.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    for (Eigen::Index j = 0; j < e.rows(); ++j) {
      const double d = (tokens.row(i) - e.row(j)).norm();
      (*dist)(i, j) = d;
      total += plan(i, j) * d;
    }
  }
  Mat v(1, 1);
  v(0, 0) = total;
  bool ng = needs(entries);
  auto plan_copy = std::make_shared<Mat>(plan);
  auto tok_copy = std::make_shared<Mat>(tokens);
  NodeId id = push(std::move(v), ng, {});
  if (ng) {
    nodes_[id].backprop = [id, entries, dist, plan_copy, tok_copy](Graph& g) {
      const double go = g.nodes_[id].grad(0, 0);
      const Mat& e = g.value(entries);
      Mat& ge = g.grad_buf(entries);
      for (Eigen::Index j = 0; j < e.rows(); ++j) {
        for (Eigen::Index i = 0; i < tok_copy->rows(); ++i) {
          const double d = (*dist)(i, j);
          if (d <= 0.0) continue;  // subgradient 0 at coincidence
          ge.row(j) += (go * (*plan_copy)(i, j) / d) *
                       (e.row(j) - tok_copy->row(i));
        }
      }
    };
  }
  return id;
}

void Graph::backward(NodeId root) {
  require_config(value(root).rows() == 1 && value(root).cols() == 1,
                 "backward: root must be scalar");
  if (!nodes_[root].needs_grad) return;
  grad_buf(root)(0, 0) = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this);
  }
}

}  // namespace hvq
