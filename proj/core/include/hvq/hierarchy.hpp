#pragma once

#include <string>
#include <vector>

#include "hvq/autodiff.hpp"
#include "hvq/codebook.hpp"
#include "hvq/rng.hpp"

namespace hvq {

/// How the quantizer input of layer l is formed from the encoder outputs:
///   Plain     h^l              -> z^l
///   Adjacent  [h^{l-1}, h^l]   -> z^l
///   Global    [h^{l-1}, theta] -> z^l  (theta = quantized top tokens z^L)
enum class HierarchyMode { Plain, Adjacent, Global };

HierarchyMode hierarchy_mode_from_string(const std::string& s);
std::string to_string(HierarchyMode m);

struct HierarchyConfig {
  int layers = 4;
  int width = 64;
  HierarchyMode mode = HierarchyMode::Global;
};

/// One quantization event: the straight-through node the decoder consumes
/// plus everything the losses, EMA updates and transport scores need.
struct QuantizedTokens {
  Graph::NodeId input_node = -1;  // quantizer input (fused embedding)
  Graph::NodeId z_node = -1;      // straight-through output
  Mat input_values;               // detached copy of the quantizer input
  QuantizationResult q;
};

/// Per-layer affine embedding maps. In Plain mode the map is width C -> C,
/// otherwise 2C -> C. Initialized to pass the (averaged) input through.
class FusionMaps {
 public:
  FusionMaps() = default;
  FusionMaps(const HierarchyConfig& cfg, Rng& rng);

  Graph::NodeId apply(Graph& g, int layer, Graph::NodeId fused_input);
  int input_width() const;
  const HierarchyConfig& config() const { return cfg_; }
  void collect_parameters(std::vector<Parameter*>& out);

 private:
  struct Map {
    Parameter w, b;
  };
  HierarchyConfig cfg_;
  std::vector<Map> maps_;
};

/// theta: token-wise nearest layer-L prototypes of the top encoder output,
/// straight-through gradient back into h^L.
QuantizedTokens global_quantize(Graph& g, Graph::NodeId h_top,
                                const Codebook& book_top);

/// z^l for one lower layer: fuse h^{l-1} with the mode's partner tokens
/// (theta in Global, h^l in Adjacent, nothing in Plain), apply the layer's
/// embedding map, and quantize with straight-through.
QuantizedTokens fuse_quantize(Graph& g, FusionMaps& maps, int layer,
                              Graph::NodeId h_prev, Graph::NodeId partner,
                              const Codebook& book_l);

/// Same fusion path with the quantizer bypassed (z^l := embedded input).
Graph::NodeId fuse_only(Graph& g, FusionMaps& maps, int layer,
                        Graph::NodeId h_prev, Graph::NodeId partner);

}  // namespace hvq
