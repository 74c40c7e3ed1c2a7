#include "hvq/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace hvq {

using nlohmann::json;

LossOptions LossOptions::from_run_config(const RunConfig& rc) {
  LossOptions o;
  o.beta = rc.train.beta;
  o.alpha = rc.pot.alpha;
  o.pot_enabled = rc.pot.enabled;
  o.pot_epsilon = rc.pot.epsilon;
  o.pot_max_iter = rc.pot.max_iter;
  o.pot_tol = rc.pot.tol;
  o.ema = rc.model.ema;
  return o;
}

EvalOptions EvalOptions::from_run_config(const RunConfig& rc) {
  EvalOptions o;
  o.lambda = rc.scoring.lambda;
  o.use_pot = rc.pot.enabled && rc.model.vq;
  o.smooth_sigma = rc.scoring.smooth_sigma;
  o.threads = rc.threads;
  return o;
}

LossResult compute_loss(Graph& g, Model& model, const Model::Forward& fw,
                        int label, const LossOptions& opt) {
  LossResult res;
  Graph::NodeId recon_node = g.sum_sq(g.sub(fw.recon, fw.h0));
  Graph::NodeId ce_node = g.cross_entropy_logits(fw.logits, label);
  res.values.recon = g.value(recon_node)(0, 0);
  res.values.ce = g.value(ce_node)(0, 0);
  Graph::NodeId total = g.add(recon_node, ce_node);

  const int layers = static_cast<int>(fw.quants.size());
  for (int l = 1; l <= layers; ++l) {
    const QuantizedTokens& qt = fw.quants[static_cast<size_t>(l - 1)];
    const double beta_l = at_layer(opt.beta, l);
    const double alpha_l = at_layer(opt.alpha, l);

    // hierarchical commitment: beta^l ||h^l - sg(e^l)||^2
    if (beta_l != 0.0) {
      Graph::NodeId commit_node = g.scale(
          g.sum_sq(g.sub(qt.input_node, g.constant(qt.q.quantized))), beta_l);
      res.values.commit += g.value(commit_node)(0, 0);
      total = g.add(total, commit_node);
    }

    // prototype term ||sg(h^l) - e^l||^2; EMA replaces its gradient role
    const double proto_val = qt.q.sq_distances.sum();
    res.values.proto += proto_val;
    if (!opt.ema) {
      Graph::NodeId entries =
          g.param(model.book_entries_param(fw.book_group, l));
      Graph::NodeId proto_node = g.sum_sq(
          g.sub(g.constant(qt.input_values), g.gather_rows(entries, qt.q.indices)));
      total = g.add(total, proto_node);
    }

    if (opt.pot_enabled) {
      const Codebook& book = model.book(fw.book_group, l);
      TransportPlan plan =
          sinkhorn(cost_matrix(qt.input_values, book.entries),
                   at_layer(opt.pot_epsilon, l), at_layer(opt.pot_max_iter, l),
                   at_layer(opt.pot_tol, l));
      const double pot_val = pot_loss(plan);
      res.values.pot += alpha_l * pot_val;
      if (!opt.ema && alpha_l != 0.0) {
        // gradient reaches the prototypes through the cost only; the plan is
        // a constant of the backward pass
        Graph::NodeId entries =
            g.param(model.book_entries_param(fw.book_group, l));
        Graph::NodeId tcost = g.transport_cost(qt.input_values, entries, plan.plan);
        Mat ent(1, 1);
        ent(0, 0) = pot_val - g.value(tcost)(0, 0);
        Graph::NodeId pot_node =
            g.scale(g.add(tcost, g.constant(std::move(ent))), alpha_l);
        total = g.add(total, pot_node);
      }
      res.plans.push_back(std::move(plan));
    }
  }
  res.values.total = res.values.recon + res.values.proto + res.values.commit +
                     res.values.pot + res.values.ce;
  res.total_node = total;
  return res;
}

void AdamW::step(const std::vector<Parameter*>& params, double lr_override) {
  const double lr = lr_override > 0.0 ? lr_override : lr_;
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (p->adam_m.size() == 0) {
      p->adam_m = Mat::Zero(p->value.rows(), p->value.cols());
      p->adam_v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    p->adam_m = b1_ * p->adam_m + (1.0 - b1_) * p->grad;
    p->adam_v = b2_ * p->adam_v + (1.0 - b2_) * p->grad.cwiseProduct(p->grad);
    const Mat mhat = p->adam_m / bc1;
    const Mat vhat = p->adam_v / bc2;
    const Mat denom =
        vhat.cwiseSqrt() + Mat::Constant(vhat.rows(), vhat.cols(), eps_);
    p->value -= lr * (mhat.cwiseQuotient(denom) + wd_ * p->value);
  }
}

std::string epoch_metrics_to_json(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["recon"] = m.loss.recon;
  j["proto"] = m.loss.proto;
  j["commit"] = m.loss.commit;
  j["pot"] = m.loss.pot;
  j["ce"] = m.loss.ce;
  j["total"] = m.loss.total;
  j["perplexity"] = m.perplexity;
  j["dead_fraction"] = m.dead_fraction;
  return j.dump();
}

namespace {

int resolve_threads(int requested, int cap) {
  int t = requested > 0
              ? requested
              : static_cast<int>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return std::min(t, std::max(1, cap));
}

UsageStats usage_from_counts(const std::vector<long>& counts) {
  long n = 0;
  for (long c : counts) n += c;
  UsageStats s;
  int dead = 0;
  double entropy = 0.0;
  for (long c : counts) {
    if (c == 0) {
      ++dead;
      continue;
    }
    const double p = static_cast<double>(c) / static_cast<double>(n);
    entropy -= p * std::log(p);
  }
  s.perplexity = n > 0 ? std::exp(entropy) : 0.0;
  s.dead_fraction =
      counts.empty() ? 0.0
                     : static_cast<double>(dead) / static_cast<double>(counts.size());
  return s;
}

}  // namespace

TrainOutput train(const Dataset& ds, const RunConfig& cfg_in,
                  const std::string& metrics_jsonl_path) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  require_input(!ds.train.empty(), "train: empty training split");
  for (const auto& s : ds.train)
    require_input(s.is_anomalous == 0,
                  "train: training split contains anomalous samples");
  const int num_classes = ds.num_classes();
  require_input(num_classes >= 1, "train: dataset has no classes");

  TrainOutput out;
  TrainedModel& tm = out.tm;
  tm.cfg = cfg;
  tm.num_classes = num_classes;
  tm.class_names = ds.class_names;
  tm.stub = BackboneStub::make(cfg.data.channels, cfg.data.patch,
                               cfg.data.backbone_seed);
  const ModelConfig mc = ModelConfig::from_run_config(cfg, num_classes);
  tm.model = std::make_unique<Model>(mc, cfg.seed);
  Model& model = *tm.model;

  const int n_train = static_cast<int>(ds.train.size());
  const int batch = cfg.train.batch_size;
  const int threads = resolve_threads(cfg.threads, batch);

  // frozen backbone features are cached once
  std::vector<Mat> h0s(static_cast<size_t>(n_train));
  std::vector<int> labels(static_cast<size_t>(n_train));
#pragma omp parallel for num_threads(threads) schedule(dynamic)
  for (int i = 0; i < n_train; ++i)
    h0s[static_cast<size_t>(i)] = tm.stub.extract(ds.train[static_cast<size_t>(i)].image());
  for (int i = 0; i < n_train; ++i)
    labels[static_cast<size_t>(i)] = ds.train[static_cast<size_t>(i)].class_id;
  for (const Mat& h0 : h0s)
    require_input(h0.rows() == mc.tokens,
                  "train: image size does not match the configured token grid");

  // codebooks start from real tokens of the owning class
  if (mc.vq) {
    Rng init_rng(Rng::derive(cfg.seed, {0xB00CULL}));
    std::vector<Mat> group_batches;
    const int groups = model.codebook_groups();
    for (int gidx = 0; gidx < groups; ++gidx) {
      std::vector<int> first;
      for (int i = 0; i < n_train && static_cast<int>(first.size()) < batch; ++i)
        if (groups == 1 || labels[static_cast<size_t>(i)] == gidx) first.push_back(i);
      require_input(!first.empty(), "train: codebook group has no samples");
      Mat stacked(static_cast<Eigen::Index>(first.size()) * mc.tokens, mc.width);
      for (size_t k = 0; k < first.size(); ++k)
        stacked.middleRows(static_cast<Eigen::Index>(k) * mc.tokens, mc.tokens) =
            h0s[static_cast<size_t>(first[k])];
      group_batches.push_back(std::move(stacked));
    }
    model.init_codebooks(group_batches, init_rng);
  }

  const LossOptions lopt = LossOptions::from_run_config(cfg);
  AdamW optimizer(cfg.train.learning_rate, cfg.train.weight_decay);
  const int drop_epoch = cfg.effective_lr_drop_epoch();
  const auto& opt_params = model.optimizer_parameters();

  std::ofstream mfile;
  if (!metrics_jsonl_path.empty()) {
    mfile.open(metrics_jsonl_path, std::ios::trunc);
    require_input(static_cast<bool>(mfile),
                  "train: cannot write metrics to " + metrics_jsonl_path);
  }

  Rng shuffle_rng(Rng::derive(cfg.seed, {0xE70CULL}));
  const int groups = model.codebook_groups();
  const int layers = mc.layers;
  const int ksize = mc.codebook_size;

  struct PerImage {
    LossBreakdown lb;
    int group = 0;
    std::vector<Mat> tokens;               // quantizer inputs per layer
    std::vector<std::vector<int>> indices;  // assignments per layer
  };

  // tokens of the most recent batch per (group, layer); feeds dead restarts
  std::vector<std::vector<Mat>> restart_pool(
      static_cast<size_t>(groups), std::vector<Mat>(static_cast<size_t>(layers)));

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr =
        cfg.train.learning_rate *
        (epoch >= drop_epoch ? cfg.train.lr_drop_factor : 1.0);
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    LossBreakdown esum;
    std::vector<std::vector<std::vector<long>>> counts(
        static_cast<size_t>(groups),
        std::vector<std::vector<long>>(static_cast<size_t>(layers),
                                       std::vector<long>(static_cast<size_t>(ksize), 0)));

    for (int b0 = 0; b0 < n_train; b0 += batch) {
      const int bs = std::min(batch, n_train - b0);
      std::vector<PerImage> per(static_cast<size_t>(bs));
      std::vector<BufferGradSink> sinks;
      sinks.reserve(static_cast<size_t>(bs));
      for (int bi = 0; bi < bs; ++bi) sinks.emplace_back(opt_params.size());

#pragma omp parallel for num_threads(threads) schedule(dynamic)
      for (int bi = 0; bi < bs; ++bi) {
        const int idx = order[static_cast<size_t>(b0 + bi)];
        Graph g(true,
                Rng::derive(cfg.seed, {0xD207ULL, static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(idx)}),
                &sinks[static_cast<size_t>(bi)]);
        Model::Forward fw = model.forward(
            g, h0s[static_cast<size_t>(idx)],
            cfg.train.teacher_force_switch ? labels[static_cast<size_t>(idx)] : -1);
        LossResult lres =
            compute_loss(g, model, fw, labels[static_cast<size_t>(idx)], lopt);
        g.backward(lres.total_node);
        PerImage& pi = per[static_cast<size_t>(bi)];
        pi.lb = lres.values;
        pi.group = fw.book_group;
        if (mc.vq) {
          pi.tokens.reserve(static_cast<size_t>(layers));
          pi.indices.reserve(static_cast<size_t>(layers));
          for (const QuantizedTokens& qt : fw.quants) {
            pi.tokens.push_back(qt.input_values);
            pi.indices.push_back(qt.q.indices);
          }
        }
      }

      // fixed-order reduction keeps training deterministic at any thread count
      for (Parameter* p : opt_params) p->zero_grad();
      for (int bi = 0; bi < bs; ++bi)
        sinks[static_cast<size_t>(bi)].flush_into_params(opt_params);
      const double inv_b = 1.0 / static_cast<double>(bs);
      for (Parameter* p : opt_params) p->grad *= inv_b;
      optimizer.step(opt_params, lr);
      model.sync_codebooks_from_params();

      if (mc.vq) {
        for (int gidx = 0; gidx < groups; ++gidx) {
          for (int l = 1; l <= layers; ++l) {
            Eigen::Index rows = 0;
            for (int bi = 0; bi < bs; ++bi)
              if (per[static_cast<size_t>(bi)].group == gidx)
                rows += per[static_cast<size_t>(bi)].tokens[static_cast<size_t>(l - 1)].rows();
            if (rows == 0) continue;
            Mat stacked(rows, mc.width);
            std::vector<int> sidx;
            sidx.reserve(static_cast<size_t>(rows));
            Eigen::Index at = 0;
            for (int bi = 0; bi < bs; ++bi) {
              const PerImage& pi = per[static_cast<size_t>(bi)];
              if (pi.group != gidx) continue;
              const Mat& t = pi.tokens[static_cast<size_t>(l - 1)];
              stacked.middleRows(at, t.rows()) = t;
              at += t.rows();
              const auto& iv = pi.indices[static_cast<size_t>(l - 1)];
              sidx.insert(sidx.end(), iv.begin(), iv.end());
            }
            if (mc.ema) ema_update(model.book(gidx, l), stacked, sidx);
            for (int v : sidx)
              ++counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)]
                      [static_cast<size_t>(v)];
            restart_pool[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)] =
                std::move(stacked);
          }
        }
      }

      for (int bi = 0; bi < bs; ++bi) {
        const LossBreakdown& lb = per[static_cast<size_t>(bi)].lb;
        esum.recon += lb.recon;
        esum.proto += lb.proto;
        esum.commit += lb.commit;
        esum.pot += lb.pot;
        esum.ce += lb.ce;
        esum.total += lb.total;
      }
    }

    if (cfg.model.dead_restart && mc.vq && mc.ema) {
      Rng restart_rng(Rng::derive(cfg.seed, {0xDEADULL, static_cast<uint64_t>(epoch)}));
      for (int gidx = 0; gidx < groups; ++gidx)
        for (int l = 1; l <= layers; ++l)
          model.book(gidx, l).restart_dead(
              counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)],
              restart_pool[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)],
              restart_rng);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    const double inv_n = 1.0 / static_cast<double>(n_train);
    em.loss = {esum.recon * inv_n, esum.proto * inv_n, esum.commit * inv_n,
               esum.pot * inv_n,   esum.ce * inv_n,    esum.total * inv_n};
    if (mc.vq) {
      em.perplexity.resize(static_cast<size_t>(layers), 0.0);
      em.dead_fraction.resize(static_cast<size_t>(layers), 0.0);
      for (int l = 0; l < layers; ++l) {
        for (int gidx = 0; gidx < groups; ++gidx) {
          UsageStats us =
              usage_from_counts(counts[static_cast<size_t>(gidx)][static_cast<size_t>(l)]);
          em.perplexity[static_cast<size_t>(l)] += us.perplexity / groups;
          em.dead_fraction[static_cast<size_t>(l)] += us.dead_fraction / groups;
        }
      }
    }
    out.history.push_back(em);
    if (mfile) mfile << epoch_metrics_to_json(em) << "\n";
  }

  // end-of-training usage over the training set, eval-mode routing
  if (mc.vq) {
    std::vector<std::vector<std::vector<long>>> counts(
        static_cast<size_t>(groups),
        std::vector<std::vector<long>>(static_cast<size_t>(layers),
                                       std::vector<long>(static_cast<size_t>(ksize), 0)));
    std::vector<PerImage> collected(static_cast<size_t>(n_train));
#pragma omp parallel for num_threads(threads) schedule(dynamic)
    for (int i = 0; i < n_train; ++i) {
      Graph g(false);
      Model::Forward fw = model.forward(g, h0s[static_cast<size_t>(i)]);
      PerImage& pi = collected[static_cast<size_t>(i)];
      pi.group = fw.book_group;
      for (const QuantizedTokens& qt : fw.quants) pi.indices.push_back(qt.q.indices);
    }
    for (const PerImage& pi : collected)
      for (int l = 1; l <= layers; ++l)
        for (int v : pi.indices[static_cast<size_t>(l - 1)])
          ++counts[static_cast<size_t>(pi.group)][static_cast<size_t>(l - 1)]
                  [static_cast<size_t>(v)];
    double dead_sum = 0.0;
    for (int gidx = 0; gidx < groups; ++gidx) {
      for (int l = 1; l <= layers; ++l) {
        UsageStats us =
            usage_from_counts(counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)]);
        UsageEntry ue;
        ue.group = gidx;
        ue.layer = l;
        ue.perplexity = us.perplexity;
        ue.dead_fraction = us.dead_fraction;
        long total = 0;
        for (long c : counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)]) total += c;
        ue.assignments = total;
        out.final_usage.push_back(ue);
        dead_sum += us.dead_fraction;
      }
    }
    out.mean_dead_fraction = dead_sum / static_cast<double>(groups * layers);
  }

  tm.rng_state = shuffle_rng.serialize();
  return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

struct SampleEval {
  int class_id = 0;
  int is_anomalous = 0;
  bool mask_missing = false;
  int pred = 0;
  int group = 0;
  double image_score = 0.0;
  ScoreMap sm;
  Vec pot_sum;                            // summed over layers, per patch
  std::vector<std::vector<int>> indices;  // per layer
};

}  // namespace

MetricsReport evaluate(TrainedModel& tm, const Dataset& ds,
                       const EvalOptions& opt) {
  require_input(!ds.test.empty(), "evaluate: empty test split");
  Model& model = *tm.model;
  const ModelConfig& mc = model.config();
  const RunConfig& cfg = tm.cfg;
  const int n = static_cast<int>(ds.test.size());
  const int threads = resolve_threads(opt.threads, n);
  const int gh = cfg.data.image_size / cfg.data.patch;
  const int gw = gh;
  const bool pot_on = opt.use_pot && mc.vq;

  std::vector<SampleEval> evals(static_cast<size_t>(n));
  constexpr int kBlock = 64;
  for (int blk = 0; blk < n; blk += kBlock) {
    const int bn = std::min(kBlock, n - blk);
#pragma omp parallel for num_threads(threads) schedule(dynamic)
    for (int bi = 0; bi < bn; ++bi) {
      const int i = blk + bi;
      const LabeledSample& s = ds.test[static_cast<size_t>(i)];
      Mat h0 = tm.stub.extract(s.image());
      Graph g(false);
      Model::Forward fw = model.forward(g, h0);
      SampleEval& ev = evals[static_cast<size_t>(i)];
      ev.class_id = s.class_id;
      ev.is_anomalous = s.is_anomalous;
      ev.mask_missing = s.mask_missing;
      ev.pred = Switch::select(fw.probs);
      ev.group = fw.book_group;
      Vec s_org = recon_score(h0, g.value(fw.recon));
      std::vector<Vec> pots;
      ev.pot_sum = Vec::Zero(s_org.size());
      if (pot_on) {
        for (int l = 1; l <= mc.layers; ++l) {
          const QuantizedTokens& qt = fw.quants[static_cast<size_t>(l - 1)];
          TransportPlan plan = sinkhorn(
              cost_matrix(qt.input_values, model.book(fw.book_group, l).entries),
              at_layer(cfg.pot.epsilon, l), at_layer(cfg.pot.max_iter, l),
              at_layer(cfg.pot.tol, l));
          pots.push_back(pot_score(plan));
          ev.pot_sum += pots.back();
        }
      }
      Vec s_cab = calibrate(s_org, pots, pot_on ? opt.lambda : 0.0);
      ev.sm = make_score_map(s_cab, gh, gw, s.height, s.width, opt.smooth_sigma);
      ev.image_score = ev.sm.image_score;
      for (const QuantizedTokens& qt : fw.quants) ev.indices.push_back(qt.q.indices);
    }
    if (opt.on_sample) {
      for (int bi = 0; bi < bn; ++bi) {
        const int i = blk + bi;
        opt.on_sample(static_cast<size_t>(i), ds.test[static_cast<size_t>(i)],
                      evals[static_cast<size_t>(i)].sm);
      }
    }
  }

  MetricsReport rep;
  const int num_classes = tm.num_classes;
  double img_sum = 0.0, pix_sum = 0.0;
  int pix_classes = 0;
  long normals = 0, normals_correct = 0;
  double pot_anom_sum = 0.0, pot_norm_sum = 0.0;
  long pot_anom_n = 0, pot_norm_n = 0;
  const int patch = cfg.data.patch;

  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> img_scores;
    std::vector<int> img_labels;
    std::vector<double> pix_scores;
    std::vector<int> pix_labels;
    int n_test_c = 0;
    for (int i = 0; i < n; ++i) {
      const SampleEval& ev = evals[static_cast<size_t>(i)];
      if (ev.class_id != c) continue;
      ++n_test_c;
      img_scores.push_back(ev.image_score);
      img_labels.push_back(ev.is_anomalous);
      if (!ev.is_anomalous) {
        ++normals;
        if (ev.pred == c) ++normals_correct;
      }
      const LabeledSample& s = ds.test[static_cast<size_t>(i)];
      if (ev.is_anomalous && s.has_mask() && !ev.mask_missing) {
        const Mat mask = s.mask();
        for (Eigen::Index r = 0; r < mask.rows(); ++r)
          for (Eigen::Index cc = 0; cc < mask.cols(); ++cc) {
            pix_scores.push_back(ev.sm.pixel_map(r, cc));
            pix_labels.push_back(mask(r, cc) > 0.5 ? 1 : 0);
          }
        if (pot_on) {
          // patch counts as anomalous when over a quarter of it is masked
          for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
              const double frac =
                  mask.block(gy * patch, gx * patch, patch, patch).mean();
              const double v = ev.pot_sum(gy * gw + gx);
              if (frac > 0.25) {
                pot_anom_sum += v;
                ++pot_anom_n;
              } else if (frac == 0.0) {
                pot_norm_sum += v;
                ++pot_norm_n;
              }
            }
        }
      }
    }
    ClassMetrics cm;
    cm.name = tm.class_names[static_cast<size_t>(c)];
    cm.n_test = n_test_c;
    cm.image_auroc = auroc(img_scores, img_labels);
    img_sum += cm.image_auroc;
    if (!pix_scores.empty()) {
      cm.pixel_auroc = auroc(pix_scores, pix_labels);
      cm.has_pixel = true;
      pix_sum += cm.pixel_auroc;
      ++pix_classes;
    }
    rep.per_class.push_back(std::move(cm));
  }

  rep.mean_image_auroc = img_sum / static_cast<double>(num_classes);
  rep.mean_pixel_auroc = pix_classes > 0 ? pix_sum / pix_classes : 0.0;
  rep.classifier_accuracy_normal =
      normals > 0 ? static_cast<double>(normals_correct) / normals : 0.0;
  rep.pot_anomalous_patch_mean =
      pot_anom_n > 0 ? pot_anom_sum / pot_anom_n : 0.0;
  rep.pot_normal_patch_mean = pot_norm_n > 0 ? pot_norm_sum / pot_norm_n : 0.0;

  char row[64];
  std::snprintf(row, sizeof(row), "%.1f / %.1f", 100.0 * rep.mean_image_auroc,
                100.0 * rep.mean_pixel_auroc);
  rep.mean_row = row;

  if (mc.vq) {
    const int groups = model.codebook_groups();
    std::vector<std::vector<std::vector<long>>> counts(
        static_cast<size_t>(groups),
        std::vector<std::vector<long>>(
            static_cast<size_t>(mc.layers),
            std::vector<long>(static_cast<size_t>(mc.codebook_size), 0)));
    for (const SampleEval& ev : evals)
      for (int l = 1; l <= mc.layers; ++l)
        for (int v : ev.indices[static_cast<size_t>(l - 1)])
          ++counts[static_cast<size_t>(ev.group)][static_cast<size_t>(l - 1)]
                  [static_cast<size_t>(v)];
    for (int gidx = 0; gidx < groups; ++gidx)
      for (int l = 1; l <= mc.layers; ++l) {
        UsageStats us = usage_from_counts(
            counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)]);
        UsageEntry ue;
        ue.group = gidx;
        ue.layer = l;
        ue.perplexity = us.perplexity;
        ue.dead_fraction = us.dead_fraction;
        long total = 0;
        for (long cc : counts[static_cast<size_t>(gidx)][static_cast<size_t>(l - 1)])
          total += cc;
        ue.assignments = total;
        rep.usage.push_back(ue);
      }
  }
  return rep;
}

std::string report_to_json(const MetricsReport& r) {
  json j;
  j["per_class"] = json::array();
  for (const auto& c : r.per_class) {
    json jc;
    jc["name"] = c.name;
    jc["image_auroc"] = c.image_auroc;
    if (c.has_pixel)
      jc["pixel_auroc"] = c.pixel_auroc;
    else
      jc["pixel_auroc"] = nullptr;
    jc["n_test"] = c.n_test;
    j["per_class"].push_back(jc);
  }
  j["mean"] = {{"image_auroc", r.mean_image_auroc},
               {"pixel_auroc", r.mean_pixel_auroc}};
  j["mean_row"] = r.mean_row;
  j["classifier_accuracy_normal"] = r.classifier_accuracy_normal;
  j["pot_patch_means"] = {{"anomalous", r.pot_anomalous_patch_mean},
                          {"normal", r.pot_normal_patch_mean}};
  j["usage"] = json::array();
  for (const auto& u : r.usage) {
    j["usage"].push_back({{"group", u.group},
                          {"layer", u.layer},
                          {"perplexity", u.perplexity},
                          {"dead_fraction", u.dead_fraction},
                          {"assignments", u.assignments}});
  }
  return j.dump(2) + "\n";
}

}  // namespace hvq
