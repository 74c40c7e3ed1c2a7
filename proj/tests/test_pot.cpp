#include <doctest.h>

#include "hvq/pot.hpp"
#include "test_util.hpp"

using namespace hvq;
using namespace hvq::testutil;

TEST_CASE("cost_matrix: coincidence, 3-4-5 triangle, symmetry") {
  Mat a(1, 2), b(1, 2);
  a << 1, 2;
  b << 1, 2;
  CHECK(cost_matrix(a, b)(0, 0) == doctest::Approx(0.0));

  Mat t(1, 2), e(1, 2);
  t << 0, 0;
  e << 3, 4;
  CHECK(cost_matrix(t, e)(0, 0) == doctest::Approx(5.0));

  Rng rng(31);
  Mat x = random_mat(4, 3, rng), y = random_mat(6, 3, rng);
  Mat cxy = cost_matrix(x, y);
  Mat cyx = cost_matrix(y, x);
  CHECK((cxy - cyx.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cost_matrix: width mismatch is a configuration error") {
  Mat a(1, 2), b(1, 3);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(cost_matrix(a, b), ConfigError);
}

TEST_CASE("sinkhorn: forced 1x1 plan") {
  Mat c(1, 1);
  c << 0.7;
  auto plan = sinkhorn(c, 0.1);
  CHECK(plan.plan(0, 0) == doctest::Approx(1.0));
  CHECK(plan.converged);
  CHECK(pot_score(plan)(0) == doctest::Approx(0.7));
}

TEST_CASE("sinkhorn: constant cost gives the uniform plan") {
  Mat c = Mat::Constant(3, 5, 2.0);
  auto plan = sinkhorn(c, 0.05);
  CHECK((plan.plan.array() - 1.0 / 15.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("sinkhorn: near-zero epsilon concentrates on the diagonal") {
  Mat c(2, 2);
  c << 0, 1, 1, 0;
  auto plan = sinkhorn(c, 0.01, 5000, 1e-9);
  Mat want(2, 2);
  want << 0.5, 0, 0, 0.5;
  CHECK((plan.plan - want).cwiseAbs().maxCoeff() < 0.01);
  CHECK((plan.plan.cwiseProduct(plan.cost)).sum() < 0.01);
}

TEST_CASE("sinkhorn: epsilon must be positive; non-convergence is a flag") {
  Mat c = Mat::Constant(2, 2, 1.0);
  CHECK_THROWS_AS(sinkhorn(c, 0.0), ConfigError);
  CHECK_THROWS_AS(sinkhorn(c, -1.0), ConfigError);

  Rng rng(36);
  Mat hard(3, 4);
  for (int i = 0; i < hard.size(); ++i) hard.data()[i] = rng.uniform(0.0, 2.0);
  auto plan = sinkhorn(hard, 0.01, 1, 1e-300);
  CHECK_FALSE(plan.converged);
  CHECK(plan.iterations_used == 1);
}

TEST_CASE("sinkhorn: marginal feasibility on random costs up to 196x512") {
  Rng rng(32);
  const int sizes[][2] = {{3, 7}, {50, 20}, {196, 512}};
  for (auto [n, k] : sizes) {
    Mat c(n, k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) c(i, j) = rng.uniform(0.0, 3.0);
    auto plan = sinkhorn(c, 0.05, 200, 1e-8);
    CHECK(plan.plan.minCoeff() >= 0.0);
    CHECK((plan.plan.rowwise().sum().array() - 1.0 / n).abs().maxCoeff() < 1e-6);
    CHECK((plan.plan.colwise().sum().array() - 1.0 / k).abs().maxCoeff() < 1e-6);
    CHECK(plan.plan.sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("sinkhorn: transport cost is non-increasing as epsilon shrinks") {
  Rng rng(33);
  Mat c(6, 9);
  for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(0.0, 2.0);
  double prev = 1e100;
  for (double eps : {1.0, 0.1, 0.01}) {
    auto plan = sinkhorn(c, eps, 20000, 1e-10);
    const double cost = (plan.plan.cwiseProduct(plan.cost)).sum();
    CHECK(cost <= prev + 1e-6);
    prev = cost;
  }
}

TEST_CASE("sinkhorn: within 2% of the exact enumeration oracle for N,K <= 4") {
  Rng rng(34);
  for (int n = 1; n <= 4; ++n) {
    for (int k = 1; k <= 4; ++k) {
      for (int trial = 0; trial < 8; ++trial) {
        Mat c(n, k);
        for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(0.0, 1.0);
        auto plan = sinkhorn(c, 0.005, 50000, 1e-10);
        const double got = (plan.plan.cwiseProduct(plan.cost)).sum();
        const double exact = exact_transport_cost(c);
        CHECK(got <= exact * 1.02 + 1e-4);
        // a not-yet-feasible iterate can undercut the LP by O(violation)
        CHECK(got >= exact - 1e-5);
      }
    }
  }
}

TEST_CASE("pot_loss: closed forms") {
  // single cell: loss = c + 1 ln 1 = c
  TransportPlan single;
  single.plan = Mat::Constant(1, 1, 1.0);
  single.cost = Mat::Constant(1, 1, 3.25);
  CHECK(pot_loss(single) == doctest::Approx(3.25));

  // uniform 2x2 plan over constant cost c: loss = c - ln 4
  TransportPlan uni;
  uni.plan = Mat::Constant(2, 2, 0.25);
  uni.cost = Mat::Constant(2, 2, 1.5);
  CHECK(pot_loss(uni) == doctest::Approx(1.5 - std::log(4.0)));

  // concentrated diagonal with zero cost: loss = -ln 2
  TransportPlan diag;
  diag.plan = Mat::Zero(2, 2);
  diag.plan(0, 0) = 0.5;
  diag.plan(1, 1) = 0.5;
  diag.cost = Mat::Zero(2, 2);
  CHECK(pot_loss(diag) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("pot_score: row-wise transport cost") {
  // uniform plan over constant cost c: every score is c / N
  TransportPlan uni;
  uni.plan = Mat::Constant(4, 3, 1.0 / 12.0);
  uni.cost = Mat::Constant(4, 3, 0.9);
  Vec s = pot_score(uni);
  for (int i = 0; i < 4; ++i) CHECK(s(i) == doctest::Approx(0.9 / 4.0));

  // brute-force row sums on a random plan
  Rng rng(35);
  TransportPlan p;
  p.plan = random_mat(3, 5, rng).cwiseAbs();
  p.cost = random_mat(3, 5, rng).cwiseAbs();
  Vec got = pot_score(p);
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 5; ++j) acc += p.plan(i, j) * p.cost(i, j);
    CHECK(got(i) == doctest::Approx(acc));
  }

  // zero-cost rows score ~0 in the near-LP regime
  Mat c(2, 2);
  c << 0, 1, 1, 0;
  auto plan = sinkhorn(c, 0.01, 5000, 1e-9);
  Vec scores = pot_score(plan);
  CHECK(scores(0) < 5e-3);
  CHECK(scores(1) < 5e-3);
}
