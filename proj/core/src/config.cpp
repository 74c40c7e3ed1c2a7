#include "hvq/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hvq {

using nlohmann::json;

namespace {

template <class T>
std::vector<T> layer_vector(const json& j, const char* key,
                            const std::vector<T>& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_array()) {
    std::vector<T> out;
    for (const auto& e : v) out.push_back(e.get<T>());
    require_config(!out.empty(), std::string("config: empty array for ") + key);
    return out;
  }
  return {v.get<T>()};
}

}  // namespace

void RunConfig::validate() const {
  require_config(data.image_size > 0 && data.image_size % data.patch == 0,
                 "config: image_size must be a positive multiple of patch");
  require_config(data.classes >= 2, "config: need at least 2 classes");
  require_config(data.channels > 0 && model.layers > 0 && model.heads > 0,
                 "config: dims must be positive");
  require_config(data.channels % model.heads == 0,
                 "config: channels must divide by heads");
  require_config(model.codebook_size > 0, "config: codebook_size must be positive");
  require_config(model.ema_decay > 0.0 && model.ema_decay < 1.0,
                 "config: ema_decay must be in (0,1)");
  require_config(model.hierarchy == "plain" || model.hierarchy == "adjacent" ||
                     model.hierarchy == "global",
                 "config: hierarchy must be plain|adjacent|global");
  require_config(train.epochs >= 0 && train.batch_size > 0,
                 "config: bad training schedule");
  require_config(train.learning_rate > 0 && train.weight_decay >= 0,
                 "config: bad optimizer settings");
  require_config(scoring.lambda >= 0.0, "config: lambda must be >= 0");
  for (double e : pot.epsilon)
    require_config(e > 0.0, "config: pot epsilon must be positive");
  for (int it : pot.max_iter)
    require_config(it >= 1, "config: pot max_iter must be >= 1");
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("data")) {
    const json& d = j.at("data");
    c.data.image_size = d.value("image_size", c.data.image_size);
    c.data.classes = d.value("classes", c.data.classes);
    c.data.per_class = d.value("per_class", c.data.per_class);
    c.data.test_normal = d.value("test_normal", c.data.test_normal);
    c.data.test_anomalous = d.value("test_anomalous", c.data.test_anomalous);
    c.data.anomaly_kinds = d.value("anomaly_kinds", c.data.anomaly_kinds);
    c.data.patch = d.value("patch", c.data.patch);
    c.data.channels = d.value("channels", c.data.channels);
    c.data.backbone_seed = d.value("backbone_seed", c.data.backbone_seed);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    c.model.layers = m.value("layers", c.model.layers);
    c.model.heads = m.value("heads", c.model.heads);
    c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
    c.model.dropout = m.value("dropout", c.model.dropout);
    c.model.layer_norm = m.value("layer_norm", c.model.layer_norm);
    c.model.hierarchy = m.value("hierarchy", c.model.hierarchy);
    c.model.codebook_size = m.value("codebook_size", c.model.codebook_size);
    c.model.vq = m.value("vq", c.model.vq);
    c.model.switch_codebook = m.value("switch_codebook", c.model.switch_codebook);
    c.model.switch_expert = m.value("switch_expert", c.model.switch_expert);
    c.model.ema = m.value("ema", c.model.ema);
    c.model.ema_decay = m.value("ema_decay", c.model.ema_decay);
    c.model.laplace_eps = m.value("laplace_eps", c.model.laplace_eps);
    c.model.dead_restart = m.value("dead_restart", c.model.dead_restart);
  }
  if (j.contains("pot")) {
    const json& p = j.at("pot");
    c.pot.enabled = p.value("enabled", c.pot.enabled);
    c.pot.epsilon = layer_vector<double>(p, "epsilon", c.pot.epsilon);
    c.pot.max_iter = layer_vector<int>(p, "max_iter", c.pot.max_iter);
    c.pot.tol = layer_vector<double>(p, "tol", c.pot.tol);
    c.pot.alpha = layer_vector<double>(p, "alpha", c.pot.alpha);
  }
  if (j.contains("scoring")) {
    const json& s = j.at("scoring");
    c.scoring.lambda = s.value("lambda", c.scoring.lambda);
    c.scoring.smooth_sigma = s.value("smooth_sigma", c.scoring.smooth_sigma);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.lr_drop_epoch = t.value("lr_drop_epoch", c.train.lr_drop_epoch);
    c.train.lr_drop_factor = t.value("lr_drop_factor", c.train.lr_drop_factor);
    c.train.beta = layer_vector<double>(t, "beta", c.train.beta);
    c.train.teacher_force_switch =
        t.value("teacher_force_switch", c.train.teacher_force_switch);
  }
  c.validate();
  return c;
}

std::string serialize_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data"] = {{"image_size", c.data.image_size},
               {"classes", c.data.classes},
               {"per_class", c.data.per_class},
               {"test_normal", c.data.test_normal},
               {"test_anomalous", c.data.test_anomalous},
               {"anomaly_kinds", c.data.anomaly_kinds},
               {"patch", c.data.patch},
               {"channels", c.data.channels},
               {"backbone_seed", c.data.backbone_seed}};
  j["model"] = {{"layers", c.model.layers},
                {"heads", c.model.heads},
                {"ffn_mult", c.model.ffn_mult},
                {"dropout", c.model.dropout},
                {"layer_norm", c.model.layer_norm},
                {"hierarchy", c.model.hierarchy},
                {"codebook_size", c.model.codebook_size},
                {"vq", c.model.vq},
                {"switch_codebook", c.model.switch_codebook},
                {"switch_expert", c.model.switch_expert},
                {"ema", c.model.ema},
                {"ema_decay", c.model.ema_decay},
                {"laplace_eps", c.model.laplace_eps},
                {"dead_restart", c.model.dead_restart}};
  j["pot"] = {{"enabled", c.pot.enabled},
              {"epsilon", c.pot.epsilon},
              {"max_iter", c.pot.max_iter},
              {"tol", c.pot.tol},
              {"alpha", c.pot.alpha}};
  j["scoring"] = {{"lambda", c.scoring.lambda},
                  {"smooth_sigma", c.scoring.smooth_sigma}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"lr_drop_epoch", c.train.lr_drop_epoch},
                {"lr_drop_factor", c.train.lr_drop_factor},
                {"beta", c.train.beta},
                {"teacher_force_switch", c.train.teacher_force_switch}};
  return j.dump(2) + "\n";
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("load_config_file: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void save_config_file(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InputError("save_config_file: cannot write " + path);
  f << serialize_config(cfg);
}

}  // namespace hvq
