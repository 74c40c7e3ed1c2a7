#pragma once

#include <string>
#include <vector>

#include "hvq/autodiff.hpp"
#include "hvq/rng.hpp"

namespace hvq {

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int width = 64;     // token channel count C
  int ffn_mult = 4;   // FFN hidden = ffn_mult * C
  double dropout = 0.1;
  bool layer_norm = true;  // post-norm after each residual; off for
                           // degenerate identity configurations
};

struct AttentionBlock {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnBlock {
  Parameter w1, b1, w2, b2;
};

struct NormBlock {
  Parameter gain, bias;
};

/// Multi-head attention: queries from q_in, keys/values from kv_in; adds
/// nothing (residuals live in the layer composition).
Graph::NodeId multi_head_attention(Graph& g, Graph::NodeId q_in,
                                   Graph::NodeId kv_in, AttentionBlock& blk,
                                   int heads, double dropout_rate);

Graph::NodeId feed_forward(Graph& g, Graph::NodeId x, FfnBlock& blk,
                           double dropout_rate);

/// Cascaded self-attention encoder. encode() returns every layer's output
/// h^1..h^L, not just the last.
class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(const TransformerConfig& cfg, Rng& rng);

  std::vector<Graph::NodeId> encode(Graph& g, Graph::NodeId h0);
  Graph::NodeId encode_layer(Graph& g, Graph::NodeId x, int layer);  // 1-based

  void collect_parameters(std::vector<Parameter*>& out);
  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    AttentionBlock self_attn;
    FfnBlock ffn;
    NormBlock norm1, norm2;
  };
  TransformerConfig cfg_;
  std::vector<Layer> layers_;
};

/// Cascaded decoder; layer l self-attends to the running state, then
/// cross-attends to the quantized tokens z^l, then applies the FFN, each
/// with a residual. decode() folds from learned queries down through layers
/// L..1 and returns d^0.
class DecoderStack {
 public:
  DecoderStack() = default;
  DecoderStack(const TransformerConfig& cfg, int tokens, Rng& rng);

  Graph::NodeId decode_layer(Graph& g, Graph::NodeId d_next, Graph::NodeId z_l,
                             int layer);  // 1-based
  Graph::NodeId decode(Graph& g, const std::vector<Graph::NodeId>& z_list);

  Parameter& initial_queries() { return init_queries_; }
  void collect_parameters(std::vector<Parameter*>& out);
  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    AttentionBlock self_attn, cross_attn;
    FfnBlock ffn;
    NormBlock norm1, norm2, norm3;
  };
  TransformerConfig cfg_;
  Parameter init_queries_;  // d^{L+1}, N x C
  std::vector<Layer> layers_;
};

// deterministic initializers shared by the model's other heads
Mat xavier_uniform(int rows, int cols, Rng& rng);
Mat normal_init(int rows, int cols, double stddev, Rng& rng);

}  // namespace hvq
