#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvq/common.hpp"

namespace hvq {

/// Serializable run configuration covering every tunable in the pipeline.
/// Scalars given for per-layer fields broadcast to all layers.
struct RunConfig {
  uint64_t seed = 7;
  int threads = 0;  // 0 = hardware concurrency

  struct Data {
    int image_size = 224;
    int classes = 3;
    int per_class = 200;
    int test_normal = 50;
    int test_anomalous = 50;
    std::vector<std::string> anomaly_kinds = {"transplant", "blob", "scramble"};
    int patch = 16;
    int channels = 64;  // token width C
    uint64_t backbone_seed = 9001;
  } data;

  struct Model {
    int layers = 4;
    int heads = 4;
    int ffn_mult = 4;
    double dropout = 0.1;
    bool layer_norm = true;
    std::string hierarchy = "global";  // plain | adjacent | global
    int codebook_size = 128;
    bool vq = true;
    bool switch_codebook = true;
    bool switch_expert = true;
    bool ema = true;
    double ema_decay = 0.99;
    double laplace_eps = 1e-5;
    bool dead_restart = false;
  } model;

  struct Pot {
    bool enabled = true;
    std::vector<double> epsilon = {0.05};
    std::vector<int> max_iter = {100};
    std::vector<double> tol = {1e-6};
    std::vector<double> alpha = {0.001};
  } pot;

  struct Scoring {
    double lambda = 0.1;
    double smooth_sigma = 4.0;
  } scoring;

  struct Train {
    int epochs = 100;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int lr_drop_epoch = 0;  // 0 = 80% of epochs
    double lr_drop_factor = 0.1;
    std::vector<double> beta = {0.25};
    bool teacher_force_switch = false;
  } train;

  int tokens() const {
    return (data.image_size / data.patch) * (data.image_size / data.patch);
  }
  int effective_lr_drop_epoch() const {
    if (train.lr_drop_epoch > 0) return train.lr_drop_epoch;
    return static_cast<int>(0.8 * train.epochs + 0.5);
  }
  void validate() const;
};

/// Broadcast accessor for per-layer vectors (scalar entries apply to all).
template <class T>
T at_layer(const std::vector<T>& v, int layer_1based) {
  if (v.empty()) throw ConfigError("per-layer config vector is empty");
  const size_t i = static_cast<size_t>(layer_1based - 1);
  return i < v.size() ? v[i] : v.back();
}

RunConfig parse_config(const std::string& json_text);
std::string serialize_config(const RunConfig& cfg);
RunConfig load_config_file(const std::string& path);
void save_config_file(const std::string& path, const RunConfig& cfg);

}  // namespace hvq
