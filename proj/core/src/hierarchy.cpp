#include "hvq/hierarchy.hpp"

namespace hvq {

HierarchyMode hierarchy_mode_from_string(const std::string& s) {
  if (s == "plain") return HierarchyMode::Plain;
  if (s == "adjacent") return HierarchyMode::Adjacent;
  if (s == "global") return HierarchyMode::Global;
  throw ConfigError("unknown hierarchy mode '" + s +
                    "' (expected plain|adjacent|global)");
}

std::string to_string(HierarchyMode m) {
  switch (m) {
    case HierarchyMode::Plain: return "plain";
    case HierarchyMode::Adjacent: return "adjacent";
    default: return "global";
  }
}

FusionMaps::FusionMaps(const HierarchyConfig& cfg, Rng& rng) : cfg_(cfg) {
  require_config(cfg.layers >= 1 && cfg.width >= 1, "FusionMaps: bad config");
  (void)rng;  // maps start as exact block averages; learning perturbs them
  const int c = cfg.width;
  const int in = input_width();
  maps_.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    Mat w;
    if (cfg.mode == HierarchyMode::Plain) {
      w = Mat::Identity(c, c);
    } else {
      w = Mat::Zero(in, c);
      w.topRows(c) = 0.5 * Mat::Identity(c, c);
      w.bottomRows(c) = 0.5 * Mat::Identity(c, c);
    }
    const std::string p = "fusion.l" + std::to_string(l + 1);
    maps_[l].w = Parameter(p + ".w", std::move(w));
    maps_[l].b = Parameter(p + ".b", Mat::Zero(1, c));
  }
}

int FusionMaps::input_width() const {
  return cfg_.mode == HierarchyMode::Plain ? cfg_.width : 2 * cfg_.width;
}

Graph::NodeId FusionMaps::apply(Graph& g, int layer, Graph::NodeId fused_input) {
  require_config(layer >= 1 && layer <= cfg_.layers, "FusionMaps: bad layer");
  require_config(g.value(fused_input).cols() == input_width(),
                 "FusionMaps: input width does not match mode");
  Map& m = maps_[layer - 1];
  return g.affine(fused_input, m.w, m.b);
}

void FusionMaps::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& m : maps_) {
    out.push_back(&m.w);
    out.push_back(&m.b);
  }
}

namespace {

QuantizedTokens quantize_node(Graph& g, Graph::NodeId input,
                              const Codebook& book) {
  QuantizedTokens out;
  out.input_node = input;
  out.input_values = g.value(input);
  out.q = quantize(out.input_values, book);
  out.z_node = g.straight_through(input, out.q.quantized);
  return out;
}

}  // namespace

QuantizedTokens global_quantize(Graph& g, Graph::NodeId h_top,
                                const Codebook& book_top) {
  return quantize_node(g, h_top, book_top);
}

Graph::NodeId fuse_only(Graph& g, FusionMaps& maps, int layer,
                        Graph::NodeId h_prev, Graph::NodeId partner) {
  const HierarchyMode mode = maps.config().mode;
  Graph::NodeId fused_input;
  switch (mode) {
    case HierarchyMode::Plain:
      fused_input = partner;  // h^l alone
      break;
    case HierarchyMode::Adjacent:
    case HierarchyMode::Global:
      fused_input = g.concat_cols(h_prev, partner);
      break;
  }
  return maps.apply(g, layer, fused_input);
}

QuantizedTokens fuse_quantize(Graph& g, FusionMaps& maps, int layer,
                              Graph::NodeId h_prev, Graph::NodeId partner,
                              const Codebook& book_l) {
  return quantize_node(g, fuse_only(g, maps, layer, h_prev, partner), book_l);
}

}  // namespace hvq
