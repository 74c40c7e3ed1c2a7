#pragma once

#include <vector>

#include "hvq/autodiff.hpp"
#include "hvq/rng.hpp"

namespace hvq {

/// Multi-category classifier plus the per-class reconstruction experts.
/// Exactly one expert runs per image; the others see no input and get no
/// gradient.
class Switch {
 public:
  Switch() = default;
  /// num_experts is 1 when expert switching is disabled; the classifier
  /// always has one logit per class.
  Switch(int num_classes, int num_experts, int width, int ffn_mult, Rng& rng);

  /// Logits node from the mean-pooled backbone tokens. Softmax of its value
  /// is the selection distribution p.
  Graph::NodeId classify(Graph& g, Graph::NodeId h0);

  /// argmax with lowest-index tie-break.
  static int select(const Vec& p);

  /// Applies expert m only: d0 + MLP(d0).
  Graph::NodeId reconstruct(Graph& g, Graph::NodeId d0, int m);

  int num_experts() const { return static_cast<int>(experts_.size()); }
  int num_classes() const { return num_classes_; }
  void collect_parameters(std::vector<Parameter*>& out);
  std::vector<Parameter*> expert_parameters(int m);

 private:
  struct Expert {
    Parameter w1, b1, w2, b2;
  };
  int num_classes_ = 0;
  Parameter cls_w, cls_b;
  std::vector<Expert> experts_;
};

/// Softmax of a single logit row.
Vec softmax_vec(const Eigen::RowVectorXd& logits);

}  // namespace hvq
