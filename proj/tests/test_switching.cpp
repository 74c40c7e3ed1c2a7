#include <doctest.h>

#include "hvq/switching.hpp"
#include "test_util.hpp"

using namespace hvq;
using namespace hvq::testutil;

TEST_CASE("softmax_vec: worked examples") {
  Eigen::RowVectorXd l1(3);
  l1 << 10, 0, 0;
  Vec p1 = softmax_vec(l1);
  CHECK(p1(0) == doctest::Approx(0.99991).epsilon(1e-4));
  CHECK(p1(1) == doctest::Approx(0.0000454).epsilon(1e-2));
  CHECK(p1.sum() == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::RowVectorXd l2(2);
  l2 << 1, 2;
  Vec p2 = softmax_vec(l2);
  CHECK(p2(0) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(p2(1) == doctest::Approx(0.7311).epsilon(1e-3));

  Eigen::RowVectorXd eq(4);
  eq.setConstant(3.7);
  Vec pu = softmax_vec(eq);
  for (int i = 0; i < 4; ++i) CHECK(pu(i) == doctest::Approx(0.25));
}

TEST_CASE("softmax is invariant to constant logit shifts") {
  Eigen::RowVectorXd l(3);
  l << 0.3, -1.2, 2.0;
  Vec base = softmax_vec(l);
  Vec shifted = softmax_vec((l.array() + 123.0).matrix());
  CHECK((base - shifted).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(Switch::select(base) == Switch::select(shifted));
}

TEST_CASE("select: argmax with lowest-index tie break") {
  Vec p(3);
  p << 0.2, 0.7, 0.1;
  CHECK(Switch::select(p) == 1);
  Vec uniform = Vec::Constant(4, 0.25);
  CHECK(Switch::select(uniform) == 0);
  Eigen::RowVectorXd l(2);
  l << 1, 2;
  CHECK(Switch::select(softmax_vec(l)) == 1);
}

TEST_CASE("classify: softmax of pooled logits lies on the simplex") {
  Rng rng(71);
  Switch sw(3, 3, 8, 4, rng);
  Graph g;
  Mat h0 = random_mat(10, 8, rng);
  Graph::NodeId logits = sw.classify(g, g.constant(h0));
  CHECK(g.value(logits).rows() == 1);
  CHECK(g.value(logits).cols() == 3);
  Vec p = softmax_vec(g.value(logits).row(0));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.minCoeff() >= 0.0);
}

TEST_CASE("reconstruct: zeroed expert is the identity (residual path)") {
  Rng rng(72);
  Switch sw(2, 2, 6, 4, rng);
  for (Parameter* p : sw.expert_parameters(0)) p->value.setZero();
  Graph g;
  Mat d0 = random_mat(4, 6, rng);
  Graph::NodeId out = sw.reconstruct(g, g.constant(d0), 0);
  CHECK((g.value(out) - d0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reconstruct: switching experts flips between two fixed maps") {
  Rng rng(73);
  Switch sw(2, 2, 3, 2, rng);
  // expert 0: +1 on every output (w2 zero except bias), expert 1: +5
  for (Parameter* p : sw.expert_parameters(0)) p->value.setZero();
  for (Parameter* p : sw.expert_parameters(1)) p->value.setZero();
  sw.expert_parameters(0)[3]->value.setConstant(1.0);  // b2
  sw.expert_parameters(1)[3]->value.setConstant(5.0);
  Graph g;
  Mat d0 = random_mat(2, 3, rng);
  Mat out0 = g.value(sw.reconstruct(g, g.constant(d0), 0));
  Mat out1 = g.value(sw.reconstruct(g, g.constant(d0), 1));
  CHECK(((out0 - d0).array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(((out1 - d0).array() - 5.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("reconstruct: shape preserved at 196x256 and bad expert is internal") {
  Rng rng(74);
  Switch sw(3, 3, 256, 4, rng);
  Graph g;
  Mat d0 = random_mat(196, 256, rng, 0.1);
  Graph::NodeId out = sw.reconstruct(g, g.constant(d0), 2);
  CHECK(g.value(out).rows() == 196);
  CHECK(g.value(out).cols() == 256);
  CHECK_THROWS_AS(sw.reconstruct(g, g.constant(d0), 3), std::logic_error);
}

TEST_CASE("sparse activation: only the routed expert accumulates gradient") {
  Rng rng(75);
  Switch sw(3, 3, 4, 2, rng);
  Graph g;
  Mat d0 = random_mat(2, 4, rng);
  Graph::NodeId out = sw.reconstruct(g, g.constant(d0), 1);
  for (Parameter* p : sw.expert_parameters(0)) p->zero_grad();
  for (Parameter* p : sw.expert_parameters(1)) p->zero_grad();
  for (Parameter* p : sw.expert_parameters(2)) p->zero_grad();
  g.backward(g.sum_sq(out));
  double g0 = 0, g1 = 0, g2 = 0;
  for (Parameter* p : sw.expert_parameters(0)) g0 += p->grad.cwiseAbs().sum();
  for (Parameter* p : sw.expert_parameters(1)) g1 += p->grad.cwiseAbs().sum();
  for (Parameter* p : sw.expert_parameters(2)) g2 += p->grad.cwiseAbs().sum();
  CHECK(g0 == 0.0);
  CHECK(g1 > 0.0);
  CHECK(g2 == 0.0);
}

TEST_CASE("expert count must be one or the class count") {
  Rng rng(76);
  CHECK_THROWS_AS(Switch(3, 2, 4, 2, rng), ConfigError);
  Switch shared(3, 1, 4, 2, rng);
  CHECK(shared.num_experts() == 1);
}
