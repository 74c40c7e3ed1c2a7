#include "hvq/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace hvq {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'V', 'Q', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_tensor(std::ofstream& f, const std::string& name, const Mat& m) {
  write_u32(f, static_cast<uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(f, static_cast<uint32_t>(m.rows()));
  write_u32(f, static_cast<uint32_t>(m.cols()));
  f.write(reinterpret_cast<const char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
}

std::pair<std::string, Mat> read_tensor(std::ifstream& f) {
  const uint32_t name_len = read_u32(f);
  std::string name(name_len, '\0');
  f.read(name.data(), name_len);
  const uint32_t rows = read_u32(f);
  const uint32_t cols = read_u32(f);
  Mat m(rows, cols);
  f.read(reinterpret_cast<char*>(m.data()),
         static_cast<std::streamsize>(sizeof(double) * m.size()));
  return {std::move(name), std::move(m)};
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainedModel& tm) {
  require_input(tm.model != nullptr, "save_checkpoint: no model");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("save_checkpoint: cannot write " + path);
  f.write(kMagic, sizeof(kMagic));

  json meta;
  meta["config"] = json::parse(serialize_config(tm.cfg));
  meta["num_classes"] = tm.num_classes;
  meta["class_names"] = tm.class_names;
  meta["rng"] = tm.rng_state;
  const std::string meta_text = meta.dump();
  write_u32(f, static_cast<uint32_t>(meta_text.size()));
  f.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  const Model& model = *tm.model;
  std::vector<std::pair<std::string, const Mat*>> tensors;
  for (const Parameter* p : model.parameters()) tensors.emplace_back(p->name, &p->value);
  tensors.emplace_back("stub.weight", &tm.stub.weight);
  Mat stub_bias = tm.stub.bias.transpose();
  std::vector<Mat> book_sizes;  // keeps row views alive while writing
  const int groups = model.codebook_groups();
  const int layers = model.config().layers;
  book_sizes.reserve(static_cast<size_t>(groups) * layers);
  for (int gidx = 0; gidx < groups; ++gidx) {
    for (int l = 1; l <= layers; ++l) {
      const Codebook& b = model.book(gidx, l);
      const std::string p =
          "codebook.g" + std::to_string(gidx) + ".l" + std::to_string(l);
      tensors.emplace_back(p + ".entries", &b.entries);
      book_sizes.push_back(b.ema_cluster_size.transpose());
      tensors.emplace_back(p + ".ema_cluster_size", &book_sizes.back());
      tensors.emplace_back(p + ".ema_embed_sum", &b.ema_embed_sum);
    }
  }
  write_u32(f, static_cast<uint32_t>(tensors.size() + 1));
  write_tensor(f, "stub.bias", stub_bias);
  for (const auto& [name, m] : tensors) write_tensor(f, name, *m);
  if (!f) throw InputError("save_checkpoint: write failed for " + path);
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw InputError("load_checkpoint: not a checkpoint file: " + path);

  const uint32_t meta_len = read_u32(f);
  std::string meta_text(meta_len, '\0');
  f.read(meta_text.data(), meta_len);
  json meta = json::parse(meta_text);

  TrainedModel tm;
  tm.cfg = parse_config(meta.at("config").dump());
  tm.num_classes = meta.at("num_classes").get<int>();
  tm.class_names = meta.at("class_names").get<std::vector<std::string>>();
  tm.rng_state = meta.value("rng", std::string());

  const ModelConfig mc = ModelConfig::from_run_config(tm.cfg, tm.num_classes);
  tm.model = std::make_unique<Model>(mc, tm.cfg.seed);
  tm.stub = BackboneStub::make(tm.cfg.data.channels, tm.cfg.data.patch,
                               tm.cfg.data.backbone_seed);

  std::map<std::string, Mat> blobs;
  const uint32_t n_tensors = read_u32(f);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, m] = read_tensor(f);
    if (!f) throw InputError("load_checkpoint: truncated file " + path);
    blobs.emplace(std::move(name), std::move(m));
  }

  auto take = [&](const std::string& name) -> Mat {
    auto it = blobs.find(name);
    if (it == blobs.end())
      throw InputError("load_checkpoint: missing tensor " + name);
    Mat m = std::move(it->second);
    blobs.erase(it);
    return m;
  };

  Model& model = *tm.model;
  for (Parameter* p : model.parameters()) {
    Mat m = take(p->name);
    require_input(m.rows() == p->value.rows() && m.cols() == p->value.cols(),
                  "load_checkpoint: shape mismatch for " + p->name);
    p->value = std::move(m);
  }
  tm.stub.weight = take("stub.weight");
  tm.stub.bias = take("stub.bias").row(0).transpose();
  for (int gidx = 0; gidx < model.codebook_groups(); ++gidx) {
    for (int l = 1; l <= mc.layers; ++l) {
      Codebook& b = model.book(gidx, l);
      const std::string p =
          "codebook.g" + std::to_string(gidx) + ".l" + std::to_string(l);
      b.entries = take(p + ".entries");
      b.ema_cluster_size = take(p + ".ema_cluster_size").row(0).transpose();
      b.ema_embed_sum = take(p + ".ema_embed_sum");
    }
  }
  model.sync_params_from_codebooks();
  return tm;
}

}  // namespace hvq
