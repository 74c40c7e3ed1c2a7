#include "hvq/transformer.hpp"

#include <cmath>

namespace hvq {

Mat xavier_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Mat normal_init(int rows, int cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

namespace {

AttentionBlock make_attention(const std::string& prefix, int c, Rng& rng) {
  AttentionBlock b;
  b.wq = Parameter(prefix + ".wq", xavier_uniform(c, c, rng));
  b.bq = Parameter(prefix + ".bq", Mat::Zero(1, c));
  b.wk = Parameter(prefix + ".wk", xavier_uniform(c, c, rng));
  b.bk = Parameter(prefix + ".bk", Mat::Zero(1, c));
  b.wv = Parameter(prefix + ".wv", xavier_uniform(c, c, rng));
  b.bv = Parameter(prefix + ".bv", Mat::Zero(1, c));
  b.wo = Parameter(prefix + ".wo", xavier_uniform(c, c, rng));
  b.bo = Parameter(prefix + ".bo", Mat::Zero(1, c));
  return b;
}

FfnBlock make_ffn(const std::string& prefix, int c, int mult, Rng& rng) {
  FfnBlock b;
  b.w1 = Parameter(prefix + ".w1", xavier_uniform(c, c * mult, rng));
  b.b1 = Parameter(prefix + ".b1", Mat::Zero(1, c * mult));
  b.w2 = Parameter(prefix + ".w2", xavier_uniform(c * mult, c, rng));
  b.b2 = Parameter(prefix + ".b2", Mat::Zero(1, c));
  return b;
}

NormBlock make_norm(const std::string& prefix, int c) {
  NormBlock b;
  b.gain = Parameter(prefix + ".gain", Mat::Ones(1, c));
  b.bias = Parameter(prefix + ".bias", Mat::Zero(1, c));
  return b;
}

void collect_attention(AttentionBlock& b, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo});
}
void collect_ffn(FfnBlock& b, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&b.w1, &b.b1, &b.w2, &b.b2});
}
void collect_norm(NormBlock& b, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&b.gain, &b.bias});
}

}  // namespace

Graph::NodeId multi_head_attention(Graph& g, Graph::NodeId q_in,
                                   Graph::NodeId kv_in, AttentionBlock& blk,
                                   int heads, double dropout_rate) {
  const int c = static_cast<int>(g.value(q_in).cols());
  require_config(g.value(kv_in).cols() == c, "attention: width mismatch");
  require_config(c % heads == 0, "attention: width must divide by heads");
  const int dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Graph::NodeId q = g.affine(q_in, blk.wq, blk.bq);
  Graph::NodeId k = g.affine(kv_in, blk.wk, blk.bk);
  Graph::NodeId v = g.affine(kv_in, blk.wv, blk.bv);

  Graph::NodeId merged = -1;
  for (int h = 0; h < heads; ++h) {
    Graph::NodeId qh = g.slice_cols(q, h * dh, dh);
    Graph::NodeId kh = g.slice_cols(k, h * dh, dh);
    Graph::NodeId vh = g.slice_cols(v, h * dh, dh);
    Graph::NodeId scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    Graph::NodeId attn = g.softmax_rows(scores);
    attn = g.dropout(attn, dropout_rate);
    Graph::NodeId oh = g.matmul(attn, vh);
    merged = (h == 0) ? oh : g.concat_cols(merged, oh);
  }
  return g.affine(merged, blk.wo, blk.bo);
}

Graph::NodeId feed_forward(Graph& g, Graph::NodeId x, FfnBlock& blk,
                           double dropout_rate) {
  Graph::NodeId h = g.gelu(g.affine(x, blk.w1, blk.b1));
  h = g.dropout(h, dropout_rate);
  return g.affine(h, blk.w2, blk.b2);
}

// ---------------------------------------------------------------------------

EncoderStack::EncoderStack(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
  require_config(cfg.layers >= 1, "EncoderStack: need at least one layer");
  layers_.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "encoder.l" + std::to_string(l + 1);
    layers_[l].self_attn = make_attention(p + ".attn", cfg.width, rng);
    layers_[l].ffn = make_ffn(p + ".ffn", cfg.width, cfg.ffn_mult, rng);
    layers_[l].norm1 = make_norm(p + ".norm1", cfg.width);
    layers_[l].norm2 = make_norm(p + ".norm2", cfg.width);
  }
}

Graph::NodeId EncoderStack::encode_layer(Graph& g, Graph::NodeId x, int layer) {
  require_config(layer >= 1 && layer <= cfg_.layers, "encode_layer: bad layer");
  require_config(g.value(x).cols() == cfg_.width, "encode_layer: width mismatch");
  Layer& ly = layers_[layer - 1];
  Graph::NodeId a = multi_head_attention(g, x, x, ly.self_attn, cfg_.heads,
                                         cfg_.dropout);
  Graph::NodeId h = g.add(x, a);
  if (cfg_.layer_norm) h = g.layer_norm_rows(h, ly.norm1.gain, ly.norm1.bias);
  Graph::NodeId f = feed_forward(g, h, ly.ffn, cfg_.dropout);
  Graph::NodeId out = g.add(h, f);
  if (cfg_.layer_norm)
    out = g.layer_norm_rows(out, ly.norm2.gain, ly.norm2.bias);
  return out;
}

std::vector<Graph::NodeId> EncoderStack::encode(Graph& g, Graph::NodeId h0) {
  std::vector<Graph::NodeId> hs;
  hs.reserve(cfg_.layers);
  Graph::NodeId x = h0;
  for (int l = 1; l <= cfg_.layers; ++l) {
    x = encode_layer(g, x, l);
    hs.push_back(x);
  }
  return hs;
}

void EncoderStack::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& ly : layers_) {
    collect_attention(ly.self_attn, out);
    collect_ffn(ly.ffn, out);
    collect_norm(ly.norm1, out);
    collect_norm(ly.norm2, out);
  }
}

// ---------------------------------------------------------------------------

DecoderStack::DecoderStack(const TransformerConfig& cfg, int tokens, Rng& rng)
    : cfg_(cfg) {
  require_config(cfg.layers >= 1, "DecoderStack: need at least one layer");
  init_queries_ =
      Parameter("decoder.queries", normal_init(tokens, cfg.width, 0.02, rng));
  layers_.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "decoder.l" + std::to_string(l + 1);
    layers_[l].self_attn = make_attention(p + ".self", cfg.width, rng);
    layers_[l].cross_attn = make_attention(p + ".cross", cfg.width, rng);
    layers_[l].ffn = make_ffn(p + ".ffn", cfg.width, cfg.ffn_mult, rng);
    layers_[l].norm1 = make_norm(p + ".norm1", cfg.width);
    layers_[l].norm2 = make_norm(p + ".norm2", cfg.width);
    layers_[l].norm3 = make_norm(p + ".norm3", cfg.width);
  }
}

Graph::NodeId DecoderStack::decode_layer(Graph& g, Graph::NodeId d_next,
                                         Graph::NodeId z_l, int layer) {
  require_config(layer >= 1 && layer <= cfg_.layers, "decode_layer: bad layer");
  require_config(g.value(d_next).cols() == cfg_.width &&
                     g.value(z_l).cols() == cfg_.width,
                 "decode_layer: width mismatch");
  Layer& ly = layers_[layer - 1];
  // q^l = MSA(d^{l+1}) + d^{l+1}
  Graph::NodeId a = multi_head_attention(g, d_next, d_next, ly.self_attn,
                                         cfg_.heads, cfg_.dropout);
  Graph::NodeId q = g.add(d_next, a);
  if (cfg_.layer_norm) q = g.layer_norm_rows(q, ly.norm1.gain, ly.norm1.bias);
  // d~^l = MCA(q^l, z^l) + q^l
  Graph::NodeId m = multi_head_attention(g, q, z_l, ly.cross_attn, cfg_.heads,
                                         cfg_.dropout);
  Graph::NodeId dt = g.add(q, m);
  if (cfg_.layer_norm) dt = g.layer_norm_rows(dt, ly.norm2.gain, ly.norm2.bias);
  // d^l = FFN(d~^l) + d~^l
  Graph::NodeId f = feed_forward(g, dt, ly.ffn, cfg_.dropout);
  Graph::NodeId out = g.add(dt, f);
  if (cfg_.layer_norm)
    out = g.layer_norm_rows(out, ly.norm3.gain, ly.norm3.bias);
  return out;
}

Graph::NodeId DecoderStack::decode(Graph& g,
                                   const std::vector<Graph::NodeId>& z_list) {
  require_config(static_cast<int>(z_list.size()) == cfg_.layers,
                 "decode: need one quantized grid per layer");
  Graph::NodeId d = g.param(init_queries_);
  for (int l = cfg_.layers; l >= 1; --l) {
    d = decode_layer(g, d, z_list[static_cast<size_t>(l - 1)], l);
  }
  return d;
}

void DecoderStack::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&init_queries_);
  for (auto& ly : layers_) {
    collect_attention(ly.self_attn, out);
    collect_attention(ly.cross_attn, out);
    collect_ffn(ly.ffn, out);
    collect_norm(ly.norm1, out);
    collect_norm(ly.norm2, out);
    collect_norm(ly.norm3, out);
  }
}

}  // namespace hvq
