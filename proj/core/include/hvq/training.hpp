#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hvq/data.hpp"
#include "hvq/model.hpp"
#include "hvq/pot.hpp"
#include "hvq/scoring.hpp"

namespace hvq {

/// The five objective terms. Weights are folded in: commit already carries
/// beta^l, pot carries alpha^l. total is their sum.
struct LossBreakdown {
  double recon = 0.0;
  double proto = 0.0;
  double commit = 0.0;
  double pot = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

struct LossOptions {
  std::vector<double> beta = {0.25};
  std::vector<double> alpha = {0.001};
  bool pot_enabled = true;
  std::vector<double> pot_epsilon = {0.05};
  std::vector<int> pot_max_iter = {100};
  std::vector<double> pot_tol = {1e-6};
  bool ema = true;  // when true, proto and pot are reported but detached

  static LossOptions from_run_config(const RunConfig& rc);
};

struct LossResult {
  LossBreakdown values;
  Graph::NodeId total_node = -1;  // differentiable terms only
  std::vector<TransportPlan> plans;  // per layer when POT ran
};

/// Assembles the objective for one image's forward pass. With EMA codebook
/// updates enabled the prototype and transport terms have no gradient path;
/// they are still reported in the breakdown.
LossResult compute_loss(Graph& g, Model& model, const Model::Forward& fw,
                        int label, const LossOptions& opt);

/// Decoupled AdamW. Gradients are consumed as-is; call zero_grad between
/// steps.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(const std::vector<Parameter*>& params, double lr_override = -1.0);
  long iterations() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;                 // means over images
  std::vector<double> perplexity;     // per layer, averaged over books
  std::vector<double> dead_fraction;  // per layer, averaged over books
};
std::string epoch_metrics_to_json(const EpochMetrics& m);

struct UsageEntry {
  int group = 0;
  int layer = 0;
  double perplexity = 0.0;
  double dead_fraction = 0.0;
  long assignments = 0;
};

/// A trained pipeline: effective config, frozen backbone, model, RNG state.
struct TrainedModel {
  RunConfig cfg;
  int num_classes = 0;
  std::vector<std::string> class_names;
  BackboneStub stub;
  std::unique_ptr<Model> model;
  std::string rng_state;
};

struct TrainOutput {
  TrainedModel tm;
  std::vector<EpochMetrics> history;
  std::vector<UsageEntry> final_usage;  // training-set pass after the last epoch
  double mean_dead_fraction = 0.0;
};

/// Full optimization loop: codebook init from the first batch per class,
/// AdamW on the differentiable terms, EMA codebook re-estimation per batch,
/// per-epoch line-delimited metrics. Deterministic for a fixed seed at any
/// thread count (per-image gradients reduce in image order).
TrainOutput train(const Dataset& ds, const RunConfig& cfg,
                  const std::string& metrics_jsonl_path = "");

struct ClassMetrics {
  std::string name;
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
  bool has_pixel = false;
  int n_test = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double mean_image_auroc = 0.0;
  double mean_pixel_auroc = 0.0;
  double classifier_accuracy_normal = 0.0;
  std::vector<UsageEntry> usage;  // test-set assignments
  std::string mean_row;           // "detection / localization", percent
  // mean transport score of anomalous vs normal patches (masked samples)
  double pot_anomalous_patch_mean = 0.0;
  double pot_normal_patch_mean = 0.0;
};
std::string report_to_json(const MetricsReport& r);

struct EvalOptions {
  double lambda = 0.1;
  bool use_pot = true;
  double smooth_sigma = 4.0;
  int threads = 0;
  /// Called per test sample (in dataset order) with its score map.
  std::function<void(size_t, const LabeledSample&, const ScoreMap&)> on_sample;

  static EvalOptions from_run_config(const RunConfig& rc);
};

/// Scores the test split: calibrated per-patch scores, pixel maps, image and
/// pixel AUROC per class with means, classifier accuracy on normal samples,
/// and codebook usage.
MetricsReport evaluate(TrainedModel& tm, const Dataset& ds,
                       const EvalOptions& opt);

}  // namespace hvq
