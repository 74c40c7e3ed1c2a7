#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hvq/common.hpp"
#include "hvq/rng.hpp"

namespace hvq {

/// A trainable tensor with its gradient and AdamW state. Parameters live
/// outside any graph; graphs bind to them as leaves.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m, adam_v;
  int slot = -1;  // index in the owning model's registry; -1 if unregistered

  Parameter() = default;
  Parameter(std::string n, Mat init)
      : name(std::move(n)), value(std::move(init)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

/// Destination for parameter gradients produced by a graph's backward pass.
/// The default sink adds straight into Parameter::grad; training uses one
/// buffer sink per image so batches reduce in a fixed order.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual void accumulate(Parameter& p, const Mat& g) = 0;
};

class DirectGradSink final : public GradSink {
 public:
  void accumulate(Parameter& p, const Mat& g) override { p.grad += g; }
};

class BufferGradSink final : public GradSink {
 public:
  explicit BufferGradSink(size_t n_slots) : grads_(n_slots) {}
  void accumulate(Parameter& p, const Mat& g) override;
  /// Adds every buffered gradient into its parameter. Call from one thread.
  void flush_into_params(const std::vector<Parameter*>& params) const;

 private:
  std::vector<Mat> grads_;
};

/// Dynamic reverse-mode tape over row-major double matrices. Nodes are
/// created in topological order; backward() walks them in reverse.
class Graph {
 public:
  using NodeId = int;

  explicit Graph(bool training = false, uint64_t dropout_seed = 0,
                 GradSink* sink = nullptr)
      : training_(training), rng_(dropout_seed), sink_(sink) {}

  bool training() const { return training_; }

  // ---- leaves ----
  NodeId constant(Mat v);
  NodeId input(Mat v);       ///< differentiable leaf (grad readable afterwards)
  NodeId param(Parameter& p);

  // ---- elementwise / linear ----
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId cmul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_nt(NodeId a, NodeId b);  ///< a * b^T
  NodeId add_rowwise(NodeId a, NodeId row);  ///< broadcast a 1xC row over rows
  NodeId affine(NodeId x, Parameter& w, Parameter& b);  ///< x*W + b

  // ---- shape ----
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId a, int col0, int ncols);
  NodeId mean_pool_rows(NodeId a);  ///< 1xC mean over rows

  // ---- nonlinear ----
  NodeId gelu(NodeId a);
  NodeId softmax_rows(NodeId a);
  NodeId layer_norm_rows(NodeId x, Parameter& gain, Parameter& bias,
                         double eps = 1e-5);
  NodeId dropout(NodeId a, double rate);

  // ---- reductions / losses ----
  NodeId sum_sq(NodeId a);  ///< 1x1 sum of squared entries
  NodeId cross_entropy_logits(NodeId logits, int label);  ///< logits 1xM

  // ---- quantization support ----
  /// Value is `quantized`; gradient is copied through to `x` unchanged.
  NodeId straight_through(NodeId x, const Mat& quantized);
  /// Rows of `a` selected by index; backward scatter-adds.
  NodeId gather_rows(NodeId a, std::vector<int> indices);
  /// sum_ij plan_ij * ||tokens_i - entries_j||_2 with gradient into `entries`
  /// only; the plan and tokens are constants of the backward pass.
  NodeId transport_cost(const Mat& tokens, NodeId entries, const Mat& plan);

  void backward(NodeId root);

  const Mat& value(NodeId id) const { return nodes_[id].value; }
  const Mat& grad(NodeId id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backprop;  // empty for constants
  };

  NodeId push(Mat value, bool needs_grad, std::function<void(Graph&)> back);
  Mat& grad_buf(NodeId id);
  bool needs(NodeId id) const { return nodes_[id].needs_grad; }

  // deque keeps references to node values stable while new nodes are pushed
  std::deque<Node> nodes_;
  bool training_;
  Rng rng_;
  GradSink* sink_;
  DirectGradSink direct_;
};

}  // namespace hvq
