#include "hvq/model.hpp"

namespace hvq {

ModelConfig ModelConfig::from_run_config(const RunConfig& rc, int num_classes) {
  ModelConfig mc;
  mc.tokens = rc.tokens();
  mc.width = rc.data.channels;
  mc.layers = rc.model.layers;
  mc.heads = rc.model.heads;
  mc.ffn_mult = rc.model.ffn_mult;
  mc.dropout = rc.model.dropout;
  mc.layer_norm = rc.model.layer_norm;
  mc.hierarchy = hierarchy_mode_from_string(rc.model.hierarchy);
  mc.codebook_size = rc.model.codebook_size;
  mc.num_classes = num_classes;
  mc.vq = rc.model.vq;
  mc.switch_codebook = rc.model.switch_codebook;
  mc.switch_expert = rc.model.switch_expert;
  mc.ema = rc.model.ema;
  mc.ema_decay = rc.model.ema_decay;
  mc.laplace_eps = rc.model.laplace_eps;
  return mc;
}

namespace {
TransformerConfig transformer_config(const ModelConfig& cfg) {
  TransformerConfig tc;
  tc.layers = cfg.layers;
  tc.heads = cfg.heads;
  tc.width = cfg.width;
  tc.ffn_mult = cfg.ffn_mult;
  tc.dropout = cfg.dropout;
  tc.layer_norm = cfg.layer_norm;
  return tc;
}
HierarchyConfig hierarchy_config(const ModelConfig& cfg) {
  HierarchyConfig hc;
  hc.layers = cfg.layers;
  hc.width = cfg.width;
  hc.mode = cfg.hierarchy;
  return hc;
}
}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
  require_config(cfg.tokens > 0 && cfg.width > 0, "Model: bad dims");
  Rng rng(Rng::derive(param_seed, {0xA0DE1ULL}));
  pos_embed_ =
      Parameter("encoder.pos_embed", normal_init(cfg.tokens, cfg.width, 0.02, rng));
  encoder_ = EncoderStack(transformer_config(cfg), rng);
  decoder_ = DecoderStack(transformer_config(cfg), cfg.tokens, rng);
  fusion_ = FusionMaps(hierarchy_config(cfg), rng);
  switch_ = Switch(cfg.num_classes, cfg.switch_expert ? cfg.num_classes : 1,
                   cfg.width, cfg.ffn_mult, rng);

  const int groups = codebook_groups();
  books_.resize(groups);
  book_params_.resize(groups);
  for (int gidx = 0; gidx < groups; ++gidx) {
    for (int l = 1; l <= cfg.layers; ++l) {
      books_[gidx].emplace_back(cfg.codebook_size, cfg.width, gidx, l,
                                cfg.ema_decay, cfg.laplace_eps);
    }
  }
  register_params();
}

void Model::register_params() {
  params_.clear();
  params_.push_back(&pos_embed_);
  encoder_.collect_parameters(params_);
  decoder_.collect_parameters(params_);
  fusion_.collect_parameters(params_);
  switch_.collect_parameters(params_);

  opt_params_ = params_;
  if (!cfg_.ema) {
    for (int gidx = 0; gidx < codebook_groups(); ++gidx) {
      book_params_[gidx].clear();
      for (int l = 1; l <= cfg_.layers; ++l) {
        book_params_[gidx].emplace_back(
            "codebook.g" + std::to_string(gidx) + ".l" + std::to_string(l) +
                ".entries",
            books_[gidx][l - 1].entries);
      }
      for (auto& p : book_params_[gidx]) opt_params_.push_back(&p);
    }
  }
  for (size_t i = 0; i < opt_params_.size(); ++i)
    opt_params_[i]->slot = static_cast<int>(i);
}

Codebook& Model::book(int group, int layer) {
  return books_.at(static_cast<size_t>(group)).at(static_cast<size_t>(layer - 1));
}
const Codebook& Model::book(int group, int layer) const {
  return books_.at(static_cast<size_t>(group)).at(static_cast<size_t>(layer - 1));
}

Parameter& Model::book_entries_param(int group, int layer) {
  require_config(!cfg_.ema, "book_entries_param: only in gradient-codebook mode");
  return book_params_.at(static_cast<size_t>(group))
      .at(static_cast<size_t>(layer - 1));
}

void Model::sync_codebooks_from_params() {
  if (cfg_.ema) return;
  for (int gidx = 0; gidx < codebook_groups(); ++gidx)
    for (int l = 1; l <= cfg_.layers; ++l)
      books_[gidx][l - 1].entries = book_params_[gidx][l - 1].value;
}

void Model::sync_params_from_codebooks() {
  if (cfg_.ema) return;
  for (int gidx = 0; gidx < codebook_groups(); ++gidx)
    for (int l = 1; l <= cfg_.layers; ++l)
      book_params_[gidx][l - 1].value = books_[gidx][l - 1].entries;
}

Model::Forward Model::forward(Graph& g, const Mat& h0, int forced_route) {
  require_config(h0.rows() == cfg_.tokens && h0.cols() == cfg_.width,
                 "Model::forward: token grid shape mismatch");
  Forward fw;
  fw.h0 = g.constant(h0);

  // switching decision comes from the backbone tokens alone
  fw.logits = switch_.classify(g, fw.h0);
  fw.probs = softmax_vec(g.value(fw.logits).row(0));
  fw.route = forced_route >= 0 ? forced_route : Switch::select(fw.probs);
  fw.book_group = cfg_.switch_codebook ? fw.route : 0;
  fw.expert_index = cfg_.switch_expert ? fw.route : 0;

  Graph::NodeId enc_in = g.add(fw.h0, g.param(pos_embed_));
  fw.enc = encoder_.encode(g, enc_in);

  const int top = cfg_.layers;
  auto h_prev_node = [&](int layer) {
    return layer == 1 ? fw.h0 : fw.enc[static_cast<size_t>(layer - 2)];
  };

  fw.z_nodes.assign(static_cast<size_t>(cfg_.layers), -1);
  if (cfg_.vq) {
    fw.quants.resize(static_cast<size_t>(cfg_.layers));
    if (cfg_.hierarchy == HierarchyMode::Global) {
      // theta doubles as z^L; lower layers fuse with it
      QuantizedTokens theta = global_quantize(g, fw.enc.back(), book(fw.book_group, top));
      fw.z_nodes[static_cast<size_t>(top - 1)] = theta.z_node;
      Graph::NodeId theta_node = theta.z_node;
      fw.quants[static_cast<size_t>(top - 1)] = std::move(theta);
      for (int l = top - 1; l >= 1; --l) {
        QuantizedTokens qt = fuse_quantize(g, fusion_, l, h_prev_node(l),
                                           theta_node, book(fw.book_group, l));
        fw.z_nodes[static_cast<size_t>(l - 1)] = qt.z_node;
        fw.quants[static_cast<size_t>(l - 1)] = std::move(qt);
      }
    } else {
      for (int l = 1; l <= top; ++l) {
        QuantizedTokens qt =
            fuse_quantize(g, fusion_, l, h_prev_node(l),
                          fw.enc[static_cast<size_t>(l - 1)], book(fw.book_group, l));
        fw.z_nodes[static_cast<size_t>(l - 1)] = qt.z_node;
        fw.quants[static_cast<size_t>(l - 1)] = std::move(qt);
      }
    }
  } else {
    // quantizer bypassed: the decoder sees the embedded inputs directly
    if (cfg_.hierarchy == HierarchyMode::Global) {
      Graph::NodeId theta_node = fw.enc.back();
      fw.z_nodes[static_cast<size_t>(top - 1)] = theta_node;
      for (int l = top - 1; l >= 1; --l)
        fw.z_nodes[static_cast<size_t>(l - 1)] =
            fuse_only(g, fusion_, l, h_prev_node(l), theta_node);
    } else {
      for (int l = 1; l <= top; ++l)
        fw.z_nodes[static_cast<size_t>(l - 1)] = fuse_only(
            g, fusion_, l, h_prev_node(l), fw.enc[static_cast<size_t>(l - 1)]);
    }
  }

  fw.d0 = decoder_.decode(g, fw.z_nodes);
  fw.recon = switch_.reconstruct(g, fw.d0, fw.expert_index);
  return fw;
}

void Model::init_codebooks(const std::vector<Mat>& first_batch_h0_per_group,
                           Rng& rng) {
  require_config(static_cast<int>(first_batch_h0_per_group.size()) ==
                     codebook_groups(),
                 "init_codebooks: one token batch per codebook group required");
  const int top = cfg_.layers;
  for (int gidx = 0; gidx < codebook_groups(); ++gidx) {
    const Mat& h0s = first_batch_h0_per_group[static_cast<size_t>(gidx)];
    require_input(h0s.rows() > 0 && h0s.rows() % cfg_.tokens == 0,
                  "init_codebooks: token batch must stack whole images");
    const int n_imgs = static_cast<int>(h0s.rows()) / cfg_.tokens;

    // encoder outputs for every image of the batch, eval mode
    std::vector<std::vector<Mat>> enc_vals(static_cast<size_t>(n_imgs));
    std::vector<Mat> h0_vals(static_cast<size_t>(n_imgs));
    for (int i = 0; i < n_imgs; ++i) {
      Graph g(false);
      Mat h0 = h0s.middleRows(static_cast<Eigen::Index>(i) * cfg_.tokens, cfg_.tokens);
      h0_vals[static_cast<size_t>(i)] = h0;
      Graph::NodeId in = g.add(g.constant(h0), g.param(pos_embed_));
      for (Graph::NodeId hid : encoder_.encode(g, in))
        enc_vals[static_cast<size_t>(i)].push_back(g.value(hid));
    }
    auto stack_layer_inputs = [&](int layer, const Mat* theta_per_img) {
      Mat stacked(static_cast<Eigen::Index>(n_imgs) * cfg_.tokens, cfg_.width);
      for (int i = 0; i < n_imgs; ++i) {
        Graph g(false);
        Graph::NodeId h_prev = g.constant(
            layer == 1 ? h0_vals[static_cast<size_t>(i)]
                       : enc_vals[static_cast<size_t>(i)][static_cast<size_t>(layer - 2)]);
        Graph::NodeId partner = g.constant(
            theta_per_img ? theta_per_img[i]
                          : enc_vals[static_cast<size_t>(i)][static_cast<size_t>(layer - 1)]);
        Graph::NodeId out = fuse_only(g, fusion_, layer, h_prev, partner);
        stacked.middleRows(static_cast<Eigen::Index>(i) * cfg_.tokens, cfg_.tokens) =
            g.value(out);
      }
      return stacked;
    };

    if (cfg_.hierarchy == HierarchyMode::Global) {
      Mat top_inputs(static_cast<Eigen::Index>(n_imgs) * cfg_.tokens, cfg_.width);
      for (int i = 0; i < n_imgs; ++i)
        top_inputs.middleRows(static_cast<Eigen::Index>(i) * cfg_.tokens, cfg_.tokens) =
            enc_vals[static_cast<size_t>(i)].back();
      book(gidx, top).init_from_tokens(top_inputs, rng);
      // theta for each image now that the top book exists
      std::vector<Mat> theta(static_cast<size_t>(n_imgs));
      for (int i = 0; i < n_imgs; ++i)
        theta[static_cast<size_t>(i)] =
            quantize(enc_vals[static_cast<size_t>(i)].back(), book(gidx, top)).quantized;
      for (int l = top - 1; l >= 1; --l)
        book(gidx, l).init_from_tokens(stack_layer_inputs(l, theta.data()), rng);
    } else {
      for (int l = 1; l <= top; ++l)
        book(gidx, l).init_from_tokens(stack_layer_inputs(l, nullptr), rng);
    }
  }
  sync_params_from_codebooks();
}

}  // namespace hvq
