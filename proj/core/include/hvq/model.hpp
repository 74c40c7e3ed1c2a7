#pragma once

#include <memory>
#include <vector>

#include "hvq/autodiff.hpp"
#include "hvq/codebook.hpp"
#include "hvq/config.hpp"
#include "hvq/hierarchy.hpp"
#include "hvq/switching.hpp"
#include "hvq/transformer.hpp"

namespace hvq {

struct ModelConfig {
  int tokens = 196;
  int width = 64;
  int layers = 4;
  int heads = 4;
  int ffn_mult = 4;
  double dropout = 0.1;
  bool layer_norm = true;
  HierarchyMode hierarchy = HierarchyMode::Global;
  int codebook_size = 128;
  int num_classes = 3;
  bool vq = true;
  bool switch_codebook = true;
  bool switch_expert = true;
  bool ema = true;
  double ema_decay = 0.99;
  double laplace_eps = 1e-5;

  static ModelConfig from_run_config(const RunConfig& rc, int num_classes);
};

/// Full reconstruction model: positional embedding, encoder, hierarchical
/// quantization with class-switched codebooks, cross-attending decoder and
/// switched reconstruction experts. Not copyable; parameters are registered
/// by address.
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t param_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  struct Forward {
    Graph::NodeId h0 = -1;                // backbone tokens (constant)
    std::vector<Graph::NodeId> enc;       // h^1..h^L
    std::vector<QuantizedTokens> quants;  // one event per layer (empty if !vq)
    std::vector<Graph::NodeId> z_nodes;   // decoder inputs z^1..z^L
    Graph::NodeId logits = -1;
    Vec probs;
    int route = 0;        // selected class index m
    int book_group = 0;   // codebook group actually used
    int expert_index = 0; // expert actually used
    Graph::NodeId d0 = -1;
    Graph::NodeId recon = -1;  // h~^0
  };

  /// One image. `forced_route` >= 0 routes codebook/expert by that class
  /// (teacher forcing); otherwise the classifier's argmax routes.
  Forward forward(Graph& g, const Mat& h0, int forced_route = -1);

  const ModelConfig& config() const { return cfg_; }
  int codebook_groups() const { return cfg_.switch_codebook ? cfg_.num_classes : 1; }
  Codebook& book(int group, int layer);  // layer is 1-based
  const Codebook& book(int group, int layer) const;

  /// All transformer/fusion/switch parameters in registry order.
  const std::vector<Parameter*>& parameters() const { return params_; }
  /// Parameters the optimizer updates; includes codebook entries only when
  /// EMA updating is disabled.
  const std::vector<Parameter*>& optimizer_parameters() const {
    return opt_params_;
  }
  /// Gradient-codebook mode only: the graph leaf for a book's entries.
  Parameter& book_entries_param(int group, int layer);
  /// Copies optimizer-updated entry values back into the codebooks.
  void sync_codebooks_from_params();
  /// Re-registers entry parameters after external codebook mutation.
  void sync_params_from_codebooks();

  /// Initializes every codebook from tokens of its owning class, running the
  /// encoder to obtain quantizer inputs layer by layer (top first, so Global
  /// fusion sees real theta tokens).
  void init_codebooks(const std::vector<Mat>& first_batch_h0_per_group,
                      Rng& rng);

  EncoderStack& encoder() { return encoder_; }
  DecoderStack& decoder() { return decoder_; }
  FusionMaps& fusion() { return fusion_; }
  Switch& switching() { return switch_; }
  Parameter& positional_embedding() { return pos_embed_; }

 private:
  void register_params();

  ModelConfig cfg_;
  Parameter pos_embed_;
  EncoderStack encoder_;
  DecoderStack decoder_;
  FusionMaps fusion_;
  Switch switch_;
  std::vector<std::vector<Codebook>> books_;        // [group][layer-1]
  std::vector<std::vector<Parameter>> book_params_; // entries leaves (!ema)
  std::vector<Parameter*> params_;
  std::vector<Parameter*> opt_params_;
};

}  // namespace hvq
