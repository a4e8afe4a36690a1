#pragma once

// Denoising training: warm-up on the complete split, then epochs that fuse a
// fitter step and a backbone step per complete batch, followed by a backbone
// pass over the missing split with imputed victim representations.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmalign/adl.hpp"
#include "mmalign/data.hpp"
#include "mmalign/model.hpp"

namespace mmalign {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

class Adam {
 public:
  Adam() = default;
  Adam(double lr, AdamConfig config) : lr_(lr), config_(config) {}

  /// Applies one update from the accumulated gradients. The list must name
  /// the same tensors, in the same order, on every call.
  void step(const ParamList& params);
  long steps() const { return t_; }

 private:
  double lr_ = 1e-3;
  AdamConfig config_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct TrainConfig {
  double eta_main = 1e-3;
  double eta_fit = 5e-4;
  Index batch = 32;
  double lambda = 0.1;
  double mu = 0.1;
  double tau = 0.1;
  Index window = 8;
  int warm_up_epochs = 1;
  int patience = 10;
  int max_epochs = 100;
  double p = 0.1;
  Setting setting = Setting::kA;
  std::uint64_t seed = 0;
  FitLossMode fit_loss = FitLossMode::kMse;
  AdamConfig adam;

  ImputeMode impute = ImputeMode::kAdl;
  bool random_fitter = false;  // never update psi; decode with the initial fitter
  bool split_loop = false;     // fitter pass and backbone pass as separate sweeps
  bool log_domain_retry = false;
  int sinkhorn_max_iter = 500;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);

struct EpochReport {
  int epoch = 0;
  double l_main = 0.0;
  double l_con = 0.0;
  double l_fit = 0.0;
  double val_metric = 0.0;
  double seconds_complete = 0.0;
  double seconds_missing = 0.0;
  double seconds_eval = 0.0;
  long complete_steps = 0;
  long fit_steps = 0;
  long missing_steps = 0;
  long skipped_batches = 0;
};

nlohmann::json to_json(const EpochReport& report);

enum class StepKind { kFit, kBackbone };

/// Called around every optimizer step; `after` is false just before the
/// parameters change (gradients already accumulated) and true right after.
using StepHook = std::function<void(StepKind kind, bool after, ModelParams& model)>;

class Trainer {
 public:
  Trainer(ModelParams& model, const TrainConfig& config);

  /// Backbone-only epochs with L_main + lambda L_con on the complete split.
  void warm_up(const Dataset& complete);

  /// One fused epoch. `complete` samples must carry x2, `missing` ones may not
  /// be read beyond x1.
  EpochReport train_epoch(const Dataset& complete, const Dataset& missing);

  long skipped_batches() const { return skipped_; }
  StepHook hook;

 private:
  struct BatchStats {
    double main = 0.0;
    double con = 0.0;
    double fit = 0.0;
    bool fitted = false;
    bool skipped = false;
  };

  std::vector<std::vector<std::size_t>> batches(std::size_t n);
  BatchStats complete_batch(const Dataset& data, const std::vector<std::size_t>& idx, bool fit_step,
                            bool backbone_step);
  double missing_batch(const Dataset& data, const std::vector<std::size_t>& idx);
  void step(StepKind kind);
  bool fitter_active() const;

  ModelParams& model_;
  TrainConfig config_;
  Rng rng_;
  Adam theta_opt_;
  Adam psi_opt_;
  long skipped_ = 0;
  int epoch_ = 0;
};

/// Mean of L_main + lambda L_con over the complete split, batched in order.
double complete_objective(const ModelParams& model, const Dataset& complete,
                          const TrainConfig& config);

struct FitResult {
  ModelParams best;
  std::vector<EpochReport> log;
  int best_epoch = 0;
  double best_val = 0.0;
  long skipped_batches = 0;
};

/// Runs warm-up and epochs with early stopping on the validation metric (MAE
/// for regression, macro-F1 for classification) and returns the best
/// parameters. Training stops once `patience` consecutive epochs fail to
/// improve on the best, so patience 0 runs exactly one epoch. Each epoch
/// report is appended to `log` as one JSON line when given.
FitResult fit(ModelParams model, const SplitDataset& data, const TrainConfig& config,
              std::ostream* log = nullptr, const StepHook& hook = {});

/// Splits a training partition by presence of the victim modality.
std::pair<Dataset, Dataset> split_by_presence(const Dataset& train);

}  // namespace mmalign
