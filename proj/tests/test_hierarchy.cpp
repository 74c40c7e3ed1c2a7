#include <doctest.h>

#include "hvq/hierarchy.hpp"
#include "test_util.hpp"

using namespace hvq;
using namespace hvq::testutil;

namespace {

HierarchyConfig hcfg(int layers, int width, HierarchyMode mode) {
  HierarchyConfig c;
  c.layers = layers;
  c.width = width;
  c.mode = mode;
  return c;
}

Codebook book_from(const Mat& entries) {
  Codebook b(static_cast<int>(entries.rows()), static_cast<int>(entries.cols()),
             0, 1);
  b.entries = entries;
  b.ema_embed_sum = entries;
  return b;
}

}  // namespace

TEST_CASE("global_quantize: rows already prototypes are a fixed point") {
  Rng rng(61);
  Mat entries = random_mat(4, 3, rng);
  Codebook book = book_from(entries);
  Mat h(2, 3);
  h.row(0) = entries.row(1);
  h.row(1) = entries.row(3);
  Graph g;
  auto qt = global_quantize(g, g.constant(h), book);
  CHECK((g.value(qt.z_node) - h).cwiseAbs().maxCoeff() == 0.0);
  CHECK(qt.q.indices == std::vector<int>{1, 3});
}

TEST_CASE("global_quantize: reuses the two-entry enumeration case") {
  Mat entries(2, 2);
  entries << 0, 1, 3, 3;
  Codebook book = book_from(entries);
  Mat h(2, 2);
  h << 0, 0, 3, 4;
  Graph g;
  auto qt = global_quantize(g, g.constant(h), book);
  Mat want(2, 2);
  want << 0, 1, 3, 3;
  CHECK((g.value(qt.z_node) - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("global_quantize: 196x256 shape is preserved") {
  Rng rng(62);
  Codebook book = book_from(random_mat(16, 256, rng));
  Graph g;
  auto qt = global_quantize(g, g.constant(random_mat(196, 256, rng)), book);
  CHECK(g.value(qt.z_node).rows() == 196);
  CHECK(g.value(qt.z_node).cols() == 256);
}

TEST_CASE("fuse_quantize: identity map in plain mode is a fixed point") {
  Rng rng(63);
  Mat entries = random_mat(3, 4, rng);
  Codebook book = book_from(entries);
  FusionMaps maps(hcfg(1, 4, HierarchyMode::Plain), rng);  // identity init
  Mat h(2, 4);
  h.row(0) = entries.row(0);
  h.row(1) = entries.row(2);
  Graph g;
  auto qt = fuse_quantize(g, maps, 1, /*h_prev=*/g.constant(h),
                          /*partner=*/g.constant(h), book);
  CHECK((g.value(qt.z_node) - h).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fuse_quantize: left-projection in global mode reduces to plain on h_prev") {
  Rng rng(64);
  const int c = 3;
  Mat entries = random_mat(5, c, rng);
  Codebook book = book_from(entries);

  FusionMaps global_maps(hcfg(1, c, HierarchyMode::Global), rng);
  // drop the theta block entirely
  std::vector<Parameter*> ps;
  global_maps.collect_parameters(ps);
  ps[0]->value.setZero();
  ps[0]->value.topRows(c) = Mat::Identity(c, c);

  FusionMaps plain_maps(hcfg(1, c, HierarchyMode::Plain), rng);  // identity

  Mat h_prev = random_mat(4, c, rng);
  Mat theta = random_mat(4, c, rng);
  Graph g;
  auto via_global = fuse_quantize(g, global_maps, 1, g.constant(h_prev),
                                  g.constant(theta), book);
  auto via_plain = fuse_quantize(g, plain_maps, 1, g.constant(h_prev),
                                 g.constant(h_prev), book);
  CHECK((g.value(via_global.z_node) - g.value(via_plain.z_node))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(via_global.q.indices == via_plain.q.indices);
}

TEST_CASE("fuse_quantize: averaging map verified against exhaustive enumeration") {
  Mat entries(2, 2);
  entries << 1, 1, -1, 0;
  Codebook book = book_from(entries);
  Rng rng(65);
  FusionMaps maps(hcfg(1, 2, HierarchyMode::Adjacent), rng);  // 0.5/0.5 blocks

  Mat a(2, 2), b(2, 2);
  a << 2, 0, -2, 1;
  b << 0, 2, 0, -1;
  Graph g;
  auto qt = fuse_quantize(g, maps, 1, g.constant(a), g.constant(b), book);
  // fused rows: [1,1], [-1,0]; brute force over both prototypes
  for (int i = 0; i < 2; ++i) {
    Mat fused = 0.5 * (a + b);
    double best = 1e300;
    int best_j = -1;
    for (int j = 0; j < 2; ++j) {
      const double d = (fused.row(i) - entries.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    CHECK(qt.q.indices[static_cast<size_t>(i)] == best_j);
  }
  CHECK(qt.q.indices == std::vector<int>{0, 1});
}

TEST_CASE("nearest-prototype optimality holds exhaustively at small K") {
  Rng rng(66);
  Codebook book = book_from(random_mat(6, 3, rng));
  FusionMaps maps(hcfg(2, 3, HierarchyMode::Global), rng);
  for (int trial = 0; trial < 10; ++trial) {
    Mat h_prev = random_mat(5, 3, rng);
    Mat theta = random_mat(5, 3, rng);
    Graph g;
    auto qt = fuse_quantize(g, maps, 1, g.constant(h_prev), g.constant(theta), book);
    const Mat& fused = g.value(qt.input_node);
    const Mat& z = g.value(qt.z_node);
    for (int i = 0; i < 5; ++i)
      for (int r = 0; r < book.size(); ++r)
        CHECK((fused.row(i) - z.row(i)).norm() <=
              (fused.row(i) - book.entries.row(r)).norm() + 1e-9);
  }
}

TEST_CASE("straight-through gradient through fuse_quantize matches finite differences") {
  Rng rng(67);
  const int c = 4;
  Codebook book = book_from(random_mat(3, c, rng));
  FusionMaps maps(hcfg(1, c, HierarchyMode::Global), rng);
  Mat w = random_mat(c, 2, rng);
  Mat h_prev0 = random_mat(2, c, rng);
  Mat theta0 = random_mat(2, c, rng);

  Graph g;
  Graph::NodeId hp = g.input(h_prev0);
  Graph::NodeId th = g.input(theta0);
  auto qt = fuse_quantize(g, maps, 1, hp, th, book);
  Graph::NodeId loss = g.sum_sq(g.matmul(qt.z_node, g.constant(w)));
  g.backward(loss);

  // reference: the downstream loss with z as a free input, differentiated at
  // z = quantized(fused), then chained through the fusion map by hand
  auto downstream = [&](const Mat& z) {
    Graph g2;
    return g2.value(g2.sum_sq(g2.matmul(g2.input(z), g2.constant(w))))(0, 0);
  };
  auto fd_z = finite_difference(
      [&](const Vec& v) { return downstream(unflatten(v, 2, c)); },
      flatten(qt.q.quantized), 1e-6);
  // dL/d(fused) = dL/dz (straight-through), then dL/dh_prev = dL/dfused * W_f^T
  std::vector<Parameter*> ps;
  maps.collect_parameters(ps);
  Mat dfused = unflatten(fd_z, 2, c);
  Mat dcat = dfused * ps[0]->value.transpose();  // 2 x 2c
  Mat d_hprev = dcat.leftCols(c);
  Mat d_theta = dcat.rightCols(c);
  CHECK(max_rel_err(flatten(g.grad(hp)), flatten(d_hprev), 1e-5) < 1e-4);
  CHECK(max_rel_err(flatten(g.grad(th)), flatten(d_theta), 1e-5) < 1e-4);
}

TEST_CASE("global and adjacent coincide at L=1 under the projection that drops h_prev") {
  Rng rng(68);
  const int c = 3;
  Mat entries = random_mat(4, c, rng);
  Codebook book = book_from(entries);
  Mat h0 = random_mat(3, c, rng);
  Mat h1 = random_mat(3, c, rng);

  // global at L=1: the top layer is quantized directly (theta = z^1)
  Graph g;
  auto global_qt = global_quantize(g, g.constant(h1), book);

  // adjacent at L=1 with the fusion map projecting onto the h^l block
  FusionMaps adj(hcfg(1, c, HierarchyMode::Adjacent), rng);
  std::vector<Parameter*> ps;
  adj.collect_parameters(ps);
  ps[0]->value.setZero();
  ps[0]->value.bottomRows(c) = Mat::Identity(c, c);
  auto adj_qt = fuse_quantize(g, adj, 1, g.constant(h0), g.constant(h1), book);

  CHECK((g.value(global_qt.z_node) - g.value(adj_qt.z_node)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(global_qt.q.indices == adj_qt.q.indices);
}

TEST_CASE("mode and width mismatches are configuration errors") {
  Rng rng(69);
  Codebook book = book_from(random_mat(2, 4, rng));
  FusionMaps maps(hcfg(1, 4, HierarchyMode::Global), rng);
  Graph g;
  Graph::NodeId narrow = g.constant(random_mat(2, 3, rng));
  Graph::NodeId ok = g.constant(random_mat(2, 4, rng));
  CHECK_THROWS_AS(fuse_quantize(g, maps, 1, narrow, ok, book), ConfigError);
  CHECK_THROWS_AS(fuse_quantize(g, maps, 2, ok, ok, book), ConfigError);
  CHECK_THROWS_AS(hierarchy_mode_from_string("diagonal"), ConfigError);
}
