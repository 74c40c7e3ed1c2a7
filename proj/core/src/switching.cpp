#include "hvq/switching.hpp"

#include "hvq/transformer.hpp"

namespace hvq {

Vec softmax_vec(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Vec p = (logits.array() - m).exp().transpose();
  p /= p.sum();
  return p;
}

Switch::Switch(int num_classes, int num_experts, int width, int ffn_mult,
               Rng& rng)
    : num_classes_(num_classes) {
  require_config(num_classes >= 1, "Switch: need at least one class");
  require_config(num_experts == 1 || num_experts == num_classes,
                 "Switch: expert count must be 1 or the class count");
  cls_w = Parameter("switch.cls_w", xavier_uniform(width, num_classes, rng));
  cls_b = Parameter("switch.cls_b", Mat::Zero(1, num_classes));
  experts_.resize(static_cast<size_t>(num_experts));
  for (int m = 0; m < num_experts; ++m) {
    const std::string p = "switch.expert" + std::to_string(m);
    experts_[m].w1 = Parameter(p + ".w1", xavier_uniform(width, width * ffn_mult, rng));
    experts_[m].b1 = Parameter(p + ".b1", Mat::Zero(1, width * ffn_mult));
    experts_[m].w2 = Parameter(p + ".w2", xavier_uniform(width * ffn_mult, width, rng));
    experts_[m].b2 = Parameter(p + ".b2", Mat::Zero(1, width));
  }
}

Graph::NodeId Switch::classify(Graph& g, Graph::NodeId h0) {
  Graph::NodeId pooled = g.mean_pool_rows(h0);
  return g.affine(pooled, cls_w, cls_b);
}

int Switch::select(const Vec& p) {
  require_config(p.size() >= 1, "select: empty distribution");
  int best = 0;
  for (int j = 1; j < p.size(); ++j)
    if (p(j) > p(best)) best = j;
  return best;
}

Graph::NodeId Switch::reconstruct(Graph& g, Graph::NodeId d0, int m) {
  if (m < 0 || m >= num_experts())
    throw std::logic_error("Switch::reconstruct: expert index out of range");
  Expert& e = experts_[static_cast<size_t>(m)];
  Graph::NodeId h = g.gelu(g.affine(d0, e.w1, e.b1));
  Graph::NodeId out = g.affine(h, e.w2, e.b2);
  return g.add(d0, out);
}

void Switch::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&cls_w);
  out.push_back(&cls_b);
  for (auto& e : experts_)
    out.insert(out.end(), {&e.w1, &e.b1, &e.w2, &e.b2});
}

std::vector<Parameter*> Switch::expert_parameters(int m) {
  Expert& e = experts_.at(static_cast<size_t>(m));
  return {&e.w1, &e.b1, &e.w2, &e.b2};
}

}  // namespace hvq
