#include <doctest.h>

#include "hvq/transformer.hpp"
#include "test_util.hpp"

using namespace hvq;
using namespace hvq::testutil;

namespace {

TransformerConfig small_cfg(int layers, int heads, int width, bool norm,
                            double dropout = 0.0) {
  TransformerConfig c;
  c.layers = layers;
  c.heads = heads;
  c.width = width;
  c.ffn_mult = 4;
  c.dropout = dropout;
  c.layer_norm = norm;
  return c;
}

void zero_all(std::vector<Parameter*>& ps) {
  for (Parameter* p : ps) p->value.setZero();
}

}  // namespace

TEST_CASE("encode returns every layer output at the right shape") {
  Rng rng(51);
  EncoderStack enc(small_cfg(4, 4, 256, true), rng);
  Graph g;
  Mat h0 = random_mat(196, 256, rng, 0.1);
  auto hs = enc.encode(g, g.constant(h0));
  CHECK(hs.size() == 4);
  for (auto id : hs) {
    CHECK(g.value(id).rows() == 196);
    CHECK(g.value(id).cols() == 256);
    CHECK(g.value(id).allFinite());
  }
}

TEST_CASE("zero-weight encoder with identity residuals passes tokens through") {
  Rng rng(52);
  EncoderStack enc(small_cfg(3, 2, 8, /*norm=*/false), rng);
  std::vector<Parameter*> ps;
  enc.collect_parameters(ps);
  zero_all(ps);
  Graph g;
  Mat h0 = random_mat(5, 8, rng);
  auto hs = enc.encode(g, g.constant(h0));
  for (auto id : hs)
    CHECK((g.value(id) - h0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-token attention reduces to the value path") {
  Rng rng(53);
  const int c = 6;
  EncoderStack enc(small_cfg(1, 2, c, /*norm=*/false), rng);
  std::vector<Parameter*> ps;
  enc.collect_parameters(ps);

  Mat x = random_mat(1, c, rng);
  Graph g;
  auto hs = enc.encode(g, g.constant(x));

  // with one token, softmax weight is 1: attention output = (x Wv + bv) Wo + bo
  // (head split then concat is the identity on a full-width row)
  const Mat wv = ps[4]->value, bv = ps[5]->value, wo = ps[6]->value,
            bo = ps[7]->value;
  Mat attn = (x * wv + bv) * wo + bo;
  Mat after_attn = x + attn;
  const Mat w1 = ps[8]->value, b1 = ps[9]->value, w2 = ps[10]->value,
            b2 = ps[11]->value;
  Mat hidden = (after_attn * w1 + b1).unaryExpr([](double t) {
    return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0)));
  });
  Mat expect = after_attn + (hidden * w2 + b2);
  CHECK((g.value(hs[0]) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention probability rows sum to one") {
  Rng rng(54);
  Graph g;
  Mat scores = random_mat(7, 7, rng, 2.0);
  const Mat& probs = g.value(g.softmax_rows(g.constant(scores)));
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(probs.minCoeff() >= 0.0);
}

TEST_CASE("decode_layer with zero value projections is the FFN residual only") {
  Rng rng(55);
  DecoderStack dec(small_cfg(1, 2, 8, /*norm=*/false), 4, rng);
  std::vector<Parameter*> ps;
  dec.collect_parameters(ps);
  // zero every value/output projection in both attentions (parameters 1..16
  // after the queries: self wq,bq,wk,bk,wv,bv,wo,bo then cross likewise)
  for (Parameter* p : ps) {
    if (p->name.find(".wv") != std::string::npos ||
        p->name.find(".bv") != std::string::npos ||
        p->name.find(".wo") != std::string::npos ||
        p->name.find(".bo") != std::string::npos)
      p->value.setZero();
  }
  Graph g;
  Mat d_next = random_mat(4, 8, rng);
  Mat z = d_next;
  Graph::NodeId out = dec.decode_layer(g, g.constant(d_next), g.constant(z), 1);

  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
  for (Parameter* p : ps) {
    if (p->name == "decoder.l1.ffn.w1") w1 = p;
    if (p->name == "decoder.l1.ffn.b1") b1 = p;
    if (p->name == "decoder.l1.ffn.w2") w2 = p;
    if (p->name == "decoder.l1.ffn.b2") b2 = p;
  }
  REQUIRE(w1 != nullptr);
  Mat hidden = ((d_next * w1->value).rowwise() + b1->value.row(0))
                   .unaryExpr([](double t) {
                     return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0)));
                   });
  Mat expect = d_next + ((hidden * w2->value).rowwise() + b2->value.row(0));
  CHECK((g.value(out) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decode folds L..1 and a single layer acts on the learned queries") {
  Rng rng(56);
  DecoderStack dec(small_cfg(1, 2, 6, true), 5, rng);
  Graph g;
  Mat z = random_mat(5, 6, rng);
  Graph::NodeId full = dec.decode(g, {g.constant(z)});

  Graph g2;
  Graph::NodeId one =
      dec.decode_layer(g2, g2.param(dec.initial_queries()), g2.constant(z), 1);
  CHECK((g.value(full) - g2.value(one)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(dec.decode(g, {g.constant(z), g.constant(z)}), ConfigError);
}

TEST_CASE("decode: 4 layers at 196x256") {
  Rng rng(57);
  DecoderStack dec(small_cfg(4, 4, 256, true), 196, rng);
  Graph g;
  std::vector<Graph::NodeId> zs;
  for (int l = 0; l < 4; ++l) zs.push_back(g.constant(random_mat(196, 256, rng, 0.1)));
  Graph::NodeId d0 = dec.decode(g, zs);
  CHECK(g.value(d0).rows() == 196);
  CHECK(g.value(d0).cols() == 256);
  CHECK(g.value(d0).allFinite());
}

TEST_CASE("token permutation equivariance of encoder and decoder") {
  Rng rng(58);
  const int n = 6, c = 8;
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};

  auto permute_rows = [&](const Mat& m) {
    Mat out(m.rows(), m.cols());
    for (int i = 0; i < n; ++i) out.row(i) = m.row(perm[static_cast<size_t>(i)]);
    return out;
  };

  EncoderStack enc(small_cfg(2, 2, c, true), rng);
  Mat h0 = random_mat(n, c, rng);
  Graph g1, g2;
  auto out1 = enc.encode(g1, g1.constant(h0));
  auto out2 = enc.encode(g2, g2.constant(permute_rows(h0)));
  CHECK((permute_rows(g1.value(out1.back())) - g2.value(out2.back()))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  DecoderStack dec(small_cfg(2, 2, c, true), n, rng);
  Mat z1 = random_mat(n, c, rng), z2 = random_mat(n, c, rng);
  Graph g3;
  Graph::NodeId d3 = dec.decode(g3, {g3.constant(z1), g3.constant(z2)});
  Mat base = g3.value(d3);
  // permuting the quantized grids and the learned queries permutes d0
  Mat saved_queries = dec.initial_queries().value;
  dec.initial_queries().value = permute_rows(saved_queries);
  Graph g4;
  Graph::NodeId d4 =
      dec.decode(g4, {g4.constant(permute_rows(z1)), g4.constant(permute_rows(z2))});
  CHECK((permute_rows(base) - g4.value(d4)).cwiseAbs().maxCoeff() < 1e-12);
  dec.initial_queries().value = saved_queries;
}

TEST_CASE("encoder layer gradient matches finite differences") {
  Rng rng(59);
  const int n = 3, c = 8;
  EncoderStack enc(small_cfg(1, 2, c, true), rng);
  Mat x0 = random_mat(n, c, rng);

  Graph g;
  Graph::NodeId x = g.input(x0);
  Graph::NodeId loss = g.sum_sq(enc.encode_layer(g, x, 1));
  g.backward(loss);
  Vec analytic = flatten(g.grad(x));

  auto f = [&](const Vec& v) {
    Graph g2;
    Graph::NodeId x2 = g2.input(unflatten(v, n, c));
    return g2.value(g2.sum_sq(enc.encode_layer(g2, x2, 1)))(0, 0);
  };
  Vec fd = finite_difference(f, flatten(x0), 1e-5);
  CHECK(max_rel_err(analytic, fd, 1e-4) < 1e-4);
}

TEST_CASE("decoder layer gradient matches finite differences") {
  Rng rng(60);
  const int n = 3, c = 8;
  DecoderStack dec(small_cfg(1, 2, c, true), n, rng);
  Mat d0 = random_mat(n, c, rng);
  Mat z0 = random_mat(n, c, rng);

  Graph g;
  Graph::NodeId d = g.input(d0);
  Graph::NodeId z = g.input(z0);
  Graph::NodeId loss = g.sum_sq(dec.decode_layer(g, d, z, 1));
  g.backward(loss);

  auto f_d = [&](const Vec& v) {
    Graph g2;
    Graph::NodeId loss2 = g2.sum_sq(
        dec.decode_layer(g2, g2.input(unflatten(v, n, c)), g2.constant(z0), 1));
    return g2.value(loss2)(0, 0);
  };
  CHECK(max_rel_err(flatten(g.grad(d)), finite_difference(f_d, flatten(d0)),
                    1e-4) < 1e-4);

  auto f_z = [&](const Vec& v) {
    Graph g2;
    Graph::NodeId loss2 = g2.sum_sq(
        dec.decode_layer(g2, g2.constant(d0), g2.input(unflatten(v, n, c)), 1));
    return g2.value(loss2)(0, 0);
  };
  CHECK(max_rel_err(flatten(g.grad(z)), finite_difference(f_z, flatten(z0)),
                    1e-4) < 1e-4);
}
