// Command-line harness: corpus generation, training, evaluation, and the
// ablation grids. Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hvq/checkpoint.hpp"
#include "hvq/config.hpp"
#include "hvq/data.hpp"
#include "hvq/png_io.hpp"
#include "hvq/training.hpp"

#include <json.hpp>

namespace fs = std::filesystem;
using namespace hvq;

namespace {

std::string resolve_out(const std::string& out_flag, const std::string& command) {
  if (!out_flag.empty()) return out_flag;
  const char* root = std::getenv("HVQ_OUT_ROOT");
  if (root == nullptr || std::string(root).empty())
    throw CLI::ValidationError(
        "--out", "missing --out and HVQ_OUT_ROOT is not set");
  return (fs::path(root) / command).string();
}

RunConfig base_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return load_config_file(config_path);
}

struct TrainFlags {
  std::string data_dir, out_dir, config_path;
  std::string hierarchy;
  bool no_vq = false, no_switch_codebook = false, no_switch_expert = false;
  bool no_pot = false, no_ema = false, dead_restart = false;
  bool teacher_force = false;
  int codebook_size = 0, epochs = -1, batch = 0, threads = -1, image_size = 0;
  double lambda = -1.0, lr = 0.0;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig apply_train_flags(const TrainFlags& f) {
  RunConfig cfg = base_config(f.config_path);
  if (!f.hierarchy.empty()) cfg.model.hierarchy = f.hierarchy;
  if (f.no_vq) {
    cfg.model.vq = false;
    cfg.pot.enabled = false;  // transport scores need prototypes
  }
  if (f.no_switch_codebook) cfg.model.switch_codebook = false;
  if (f.no_switch_expert) cfg.model.switch_expert = false;
  if (f.no_pot) cfg.pot.enabled = false;
  if (f.no_ema) cfg.model.ema = false;
  if (f.dead_restart) cfg.model.dead_restart = true;
  if (f.teacher_force) cfg.train.teacher_force_switch = true;
  if (f.codebook_size > 0) cfg.model.codebook_size = f.codebook_size;
  if (f.epochs >= 0) cfg.train.epochs = f.epochs;
  if (f.batch > 0) cfg.train.batch_size = f.batch;
  if (f.threads >= 0) cfg.threads = f.threads;
  if (f.image_size > 0) cfg.data.image_size = f.image_size;
  if (f.lambda >= 0.0) cfg.scoring.lambda = f.lambda;
  if (f.lr > 0.0) cfg.train.learning_rate = f.lr;
  if (f.seed_set) cfg.seed = f.seed;
  cfg.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  save_config_file((fs::path(out_dir) / "config.json").string(), cfg);
}

void print_report(const MetricsReport& rep) {
  std::cout << "class              image AUROC   pixel AUROC\n";
  for (const auto& pc : rep.per_class) {
    char line[128];
    if (pc.has_pixel)
      std::snprintf(line, sizeof(line), "%-18s %11.4f %13.4f", pc.name.c_str(),
                    pc.image_auroc, pc.pixel_auroc);
    else
      std::snprintf(line, sizeof(line), "%-18s %11.4f %13s", pc.name.c_str(),
                    pc.image_auroc, "n/a");
    std::cout << line << "\n";
  }
  std::cout << "mean (detection / localization): " << rep.mean_row << "\n";
  std::cout << "classifier accuracy on normal test images: "
            << rep.classifier_accuracy_normal << "\n";
}

Mat normalize01(const Mat& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  if (hi <= lo) return Mat::Zero(m.rows(), m.cols());
  return ((m.array() - lo) / (hi - lo)).matrix();
}

Image triptych(const LabeledSample& s, const ScoreMap& sm) {
  const int h = s.height, w = s.width, gap = 2;
  Image panel(h, 3 * w + 2 * gap);
  for (auto& c : panel.chan) c.setConstant(1.0);
  Image input = s.image();
  Mat mask = s.has_mask() ? s.mask() : Mat::Zero(h, w);
  Mat score = normalize01(sm.pixel_map);
  for (int ch = 0; ch < 3; ++ch) {
    panel.chan[ch].block(0, 0, h, w) = input.chan[ch];
    panel.chan[ch].block(0, w + gap, h, w) = mask;
    panel.chan[ch].block(0, 2 * (w + gap), h, w) = score;
  }
  return panel;
}

int run_gen(const std::string& out_flag, RunConfig cfg) {
  const std::string out = resolve_out(out_flag, "gen");
  Dataset ds = gen_synthetic([&] {
    SyntheticSpec s;
    s.classes = cfg.data.classes;
    s.per_class = cfg.data.per_class;
    s.test_normal = cfg.data.test_normal;
    s.test_anomalous = cfg.data.test_anomalous;
    s.height = cfg.data.image_size;
    s.width = cfg.data.image_size;
    s.anomaly_kinds = cfg.data.anomaly_kinds;
    s.seed = cfg.seed;
    return s;
  }());
  fs::create_directories(out);
  write_mvtec_style(ds, out);
  echo_config(cfg, out);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size()
            << " test images across " << ds.num_classes() << " classes to "
            << out << "\n";
  return 0;
}

int run_train(const TrainFlags& f) {
  RunConfig cfg = apply_train_flags(f);
  const std::string out = resolve_out(f.out_dir, "train");
  Dataset ds = load_mvtec_style(f.data_dir, cfg.data.image_size);
  cfg.data.classes = ds.num_classes();
  fs::create_directories(out);
  echo_config(cfg, out);

  TrainOutput result =
      train(ds, cfg, (fs::path(out) / "metrics.jsonl").string());
  for (const auto& em : result.history)
    std::cout << epoch_metrics_to_json(em) << "\n";

  const std::string ck = (fs::path(out) / "checkpoint.hvq").string();
  save_checkpoint(ck, result.tm);

  nlohmann::json summary;
  summary["checkpoint"] = ck;
  summary["epochs"] = static_cast<int>(result.history.size());
  summary["mean_dead_fraction"] = result.mean_dead_fraction;
  summary["final_usage"] = nlohmann::json::array();
  for (const auto& u : result.final_usage)
    summary["final_usage"].push_back({{"group", u.group},
                                      {"layer", u.layer},
                                      {"perplexity", u.perplexity},
                                      {"dead_fraction", u.dead_fraction},
                                      {"assignments", u.assignments}});
  std::ofstream((fs::path(out) / "train_summary.json").string())
      << summary.dump(2) << "\n";
  std::cout << "checkpoint: " << ck << "\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& ck_path,
             const std::string& out_flag, bool plot, double lambda,
             bool no_pot, int threads) {
  const std::string out = resolve_out(out_flag, "eval");
  TrainedModel tm = load_checkpoint(ck_path);
  Dataset ds = load_mvtec_style(data_dir, tm.cfg.data.image_size);
  require_input(ds.num_classes() == tm.num_classes,
                "eval: dataset class count differs from the checkpoint");
  fs::create_directories(out);
  RunConfig effective = tm.cfg;
  if (lambda >= 0.0) effective.scoring.lambda = lambda;
  if (no_pot) effective.pot.enabled = false;
  if (threads >= 0) effective.threads = threads;
  echo_config(effective, out);

  EvalOptions eo = EvalOptions::from_run_config(effective);
  if (plot) {
    fs::create_directories(fs::path(out) / "plots");
    fs::create_directories(fs::path(out) / "maps");
    eo.on_sample = [&](size_t idx, const LabeledSample& s, const ScoreMap& sm) {
      if (!s.is_anomalous) return;
      char name[64];
      std::snprintf(name, sizeof(name), "%04zu_%s_%s", idx,
                    tm.class_names[static_cast<size_t>(s.class_id)].c_str(),
                    s.defect_kind.c_str());
      save_png((fs::path(out) / "plots" / (std::string(name) + "_triptych.png"))
                   .string(),
               triptych(s, sm));
      write_matrix_file(
          (fs::path(out) / "maps" / (std::string(name) + ".hvqm")).string(),
          sm.pixel_map);
      save_png_gray(
          (fs::path(out) / "maps" / (std::string(name) + ".png")).string(),
          normalize01(sm.pixel_map));
    };
  }

  MetricsReport rep = evaluate(tm, ds, eo);
  std::ofstream((fs::path(out) / "report.json").string()) << report_to_json(rep);
  print_report(rep);
  return 0;
}

struct AblateRow {
  std::string name;
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
  double mean_dead_fraction = 0.0;
};

int run_ablate(const std::string& data_dir, const std::string& out_flag,
               const std::string& grids_csv, const std::vector<int>& k_grid,
               const TrainFlags& base_flags) {
  const std::string out = resolve_out(out_flag, "ablate");
  RunConfig base = apply_train_flags(base_flags);
  Dataset ds = load_mvtec_style(data_dir, base.data.image_size);
  base.data.classes = ds.num_classes();
  fs::create_directories(out);
  echo_config(base, out);

  struct Variant {
    std::string grid, name;
    RunConfig cfg;
  };
  std::vector<Variant> variants;
  auto add = [&](const std::string& grid, const std::string& name,
                 auto&& tweak) {
    RunConfig cfg = base;
    tweak(cfg);
    variants.push_back({grid, name, std::move(cfg)});
  };

  std::set<std::string> grids;
  {
    std::stringstream ss(grids_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok != "hierarchy" && tok != "K" && tok != "components")
        throw CLI::ValidationError("--grid", "unknown grid '" + tok + "'");
      grids.insert(tok);
    }
  }

  if (grids.count("hierarchy")) {
    for (const std::string mode : {"plain", "adjacent", "global"})
      add("hierarchy", std::string("hierarchy_") + mode,
          [&](RunConfig& c) { c.model.hierarchy = mode; });
  }
  if (grids.count("K")) {
    for (int k : k_grid)
      add("K", "K_" + std::to_string(k),
          [&](RunConfig& c) { c.model.codebook_size = k; });
  }
  if (grids.count("components")) {
    add("components", "no_vq", [](RunConfig& c) {
      c.model.vq = false;
      c.pot.enabled = false;
      c.model.switch_codebook = c.model.switch_expert = false;
    });
    add("components", "single", [](RunConfig& c) {
      c.model.hierarchy = "plain";
      c.model.switch_codebook = c.model.switch_expert = false;
      c.pot.enabled = false;
    });
    add("components", "single_codebook_switch", [](RunConfig& c) {
      c.model.hierarchy = "plain";
      c.model.switch_expert = false;
      c.pot.enabled = false;
    });
    add("components", "hier", [](RunConfig& c) {
      c.model.switch_codebook = c.model.switch_expert = false;
      c.pot.enabled = false;
    });
    add("components", "hier_codebook_switch", [](RunConfig& c) {
      c.model.switch_expert = false;
      c.pot.enabled = false;
    });
    add("components", "hier_pot", [](RunConfig& c) {
      c.model.switch_codebook = c.model.switch_expert = false;
    });
    add("components", "hier_both_switches", [](RunConfig& c) {
      c.pot.enabled = false;
    });
    add("components", "full", [](RunConfig&) {});
  }

  std::vector<AblateRow> rows;
  nlohmann::json jout = nlohmann::json::array();
  for (const auto& v : variants) {
    const fs::path run_dir = fs::path(out) / v.name;
    fs::create_directories(run_dir);
    echo_config(v.cfg, run_dir.string());
    std::cout << "[ablate] " << v.name << " ..." << std::flush;
    TrainOutput tr = train(ds, v.cfg, (run_dir / "metrics.jsonl").string());
    MetricsReport rep = evaluate(tr.tm, ds, EvalOptions::from_run_config(v.cfg));
    std::ofstream((run_dir / "report.json").string()) << report_to_json(rep);
    AblateRow row{v.name, rep.mean_image_auroc, rep.mean_pixel_auroc,
                  tr.mean_dead_fraction};
    rows.push_back(row);
    jout.push_back({{"grid", v.grid},
                    {"name", v.name},
                    {"image_auroc", row.image_auroc},
                    {"pixel_auroc", row.pixel_auroc},
                    {"mean_dead_fraction", row.mean_dead_fraction}});
    std::cout << " image " << row.image_auroc << ", pixel " << row.pixel_auroc
              << "\n";
  }

  std::ofstream((fs::path(out) / "ablation.json").string()) << jout.dump(2) << "\n";
  std::ofstream table((fs::path(out) / "table.txt").string());
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %12s %12s %10s", "configuration",
                "detection", "localization", "dead-frac");
  table << line << "\n";
  std::cout << line << "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-28s %12.4f %12.4f %10.4f",
                  r.name.c_str(), r.image_auroc, r.pixel_auroc,
                  r.mean_dead_fraction);
    table << line << "\n";
    std::cout << line << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical vector-quantized transformer for multi-class "
               "anomaly detection"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic texture corpus");
  std::string gen_out, gen_config;
  RunConfig gen_defaults;
  int gen_classes = gen_defaults.data.classes;
  int gen_per_class = gen_defaults.data.per_class;
  int gen_test_normal = gen_defaults.data.test_normal;
  int gen_test_anomalous = gen_defaults.data.test_anomalous;
  int gen_size = gen_defaults.data.image_size;
  uint64_t gen_seed = gen_defaults.seed;
  std::vector<std::string> gen_kinds;
  gen->add_option("--out", gen_out, "corpus directory");
  gen->add_option("--config", gen_config, "config file (JSON)");
  gen->add_option("--classes", gen_classes, "number of texture classes")
      ->check(CLI::Range(2, 64));
  gen->add_option("--per-class", gen_per_class, "training images per class")
      ->check(CLI::PositiveNumber);
  gen->add_option("--test-normal", gen_test_normal, "normal test images per class");
  gen->add_option("--test-anomalous", gen_test_anomalous,
                  "anomalous test images per class");
  gen->add_option("--size", gen_size, "square image size in pixels");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--kinds", gen_kinds,
                  "anomaly kinds (transplant, blob, scramble)")
      ->delimiter(',');

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train on an MVTec-style corpus");
  TrainFlags tf;
  tr->add_option("--data", tf.data_dir, "corpus root")->required();
  tr->add_option("--out", tf.out_dir, "output directory");
  tr->add_option("--config", tf.config_path, "config file (JSON)");
  tr->add_option("--hierarchy", tf.hierarchy, "plain|adjacent|global")
      ->check(CLI::IsMember({"plain", "adjacent", "global"}));
  tr->add_flag("--no-vq", tf.no_vq, "bypass quantization (z = embedded input)");
  tr->add_flag("--no-switch-codebook", tf.no_switch_codebook,
               "one shared codebook group");
  tr->add_flag("--no-switch-expert", tf.no_switch_expert,
               "one shared reconstruction expert");
  tr->add_flag("--no-pot", tf.no_pot, "disable the transport loss and scoring");
  tr->add_flag("--no-ema", tf.no_ema,
               "learn codebooks by gradient instead of moving averages");
  tr->add_flag("--dead-restart", tf.dead_restart,
               "re-seed unused codebook entries each epoch");
  tr->add_flag("--teacher-force-switch", tf.teacher_force,
               "route codebooks/experts by the true label during training");
  tr->add_option("--K", tf.codebook_size, "prototypes per codebook")
      ->check(CLI::PositiveNumber);
  auto* lambda_opt =
      tr->add_option("--lambda", tf.lambda, "score calibration weight");
  tr->add_option("--epochs", tf.epochs, "training epochs");
  tr->add_option("--batch", tf.batch, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tf.lr, "learning rate");
  tr->add_option("--image-size", tf.image_size, "training resolution");
  tr->add_option("--threads", tf.threads, "worker threads (0 = hardware)");
  auto* seed_opt = tr->add_option("--seed", tf.seed, "run seed");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string ev_data, ev_ck, ev_out;
  bool ev_plot = false, ev_no_pot = false;
  double ev_lambda = -1.0;
  int ev_threads = -1;
  ev->add_option("--data", ev_data, "corpus root")->required();
  ev->add_option("--checkpoint", ev_ck, "checkpoint file")->required();
  ev->add_option("--out", ev_out, "output directory");
  ev->add_flag("--plot", ev_plot,
               "write triptychs and score maps for anomalous samples");
  auto* ev_lambda_opt =
      ev->add_option("--lambda", ev_lambda, "score calibration weight");
  auto* ev_no_pot_flag =
      ev->add_flag("--no-pot", ev_no_pot, "score without transport calibration");
  ev->add_option("--threads", ev_threads, "worker threads");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "run the ablation grids");
  TrainFlags af;
  std::string ab_out, ab_grid = "hierarchy,K,components";
  std::vector<int> ab_kgrid = {64, 128, 256};
  ab->add_option("--data", af.data_dir, "corpus root")->required();
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--config", af.config_path, "config file (JSON)");
  ab->add_option("--grid", ab_grid, "comma list of hierarchy,K,components");
  ab->add_option("--K-grid", ab_kgrid, "codebook sizes for the K grid")
      ->delimiter(',');
  ab->add_option("--epochs", af.epochs, "epochs per run");
  ab->add_option("--image-size", af.image_size, "training resolution");
  ab->add_option("--threads", af.threads, "worker threads");
  auto* ab_seed_opt = ab->add_option("--seed", af.seed, "run seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = base_config(gen_config);
      if (gen->count("--classes")) cfg.data.classes = gen_classes;
      if (gen->count("--per-class")) cfg.data.per_class = gen_per_class;
      if (gen->count("--test-normal")) cfg.data.test_normal = gen_test_normal;
      if (gen->count("--test-anomalous"))
        cfg.data.test_anomalous = gen_test_anomalous;
      if (gen->count("--size")) cfg.data.image_size = gen_size;
      if (gen->count("--seed")) cfg.seed = gen_seed;
      if (gen->count("--kinds")) cfg.data.anomaly_kinds = gen_kinds;
      cfg.validate();
      return run_gen(gen_out, cfg);
    }
    if (tr->parsed()) {
      if (tf.no_pot && lambda_opt->count() > 0)
        throw CLI::ValidationError("--lambda",
                                   "--lambda has no effect with --no-pot");
      tf.seed_set = seed_opt->count() > 0;
      return run_train(tf);
    }
    if (ev->parsed()) {
      if (ev_no_pot_flag->count() > 0 && ev_lambda_opt->count() > 0)
        throw CLI::ValidationError("--lambda",
                                   "--lambda has no effect with --no-pot");
      return run_eval(ev_data, ev_ck, ev_out, ev_plot, ev_lambda, ev_no_pot,
                      ev_threads);
    }
    if (ab->parsed()) {
      af.seed_set = ab_seed_opt->count() > 0;
      return run_ablate(af.data_dir, ab_out, ab_grid, ab_kgrid, af);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
