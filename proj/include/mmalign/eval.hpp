#pragma once

// Metrics, condition runners (the method, its ablations and the LB/UB and
// zero-imputation references), window sweeps and paired t-tests.
//
// Reports come out as a text table, JSON and, for sweeps, CSV with columns
// W,mean,std.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmalign/data.hpp"
#include "mmalign/model.hpp"
#include "mmalign/training.hpp"

namespace mmalign {

class StatisticsError : public Error {
 public:
  explicit StatisticsError(const std::string& what) : Error(Category::kData, what) {}
};

double mae(std::span<const double> preds, std::span<const double> labels);
double mse(std::span<const double> preds, std::span<const double> labels);
/// Sign agreement over samples whose label is nonzero.
double acc2(std::span<const double> preds, std::span<const double> labels);
/// Unweighted mean of per-class F1; a class with no support and no
/// predictions scores 0.
double macro_f1(std::span<const int> preds, std::span<const int> labels, int num_classes = 7);

struct PredictionSet {
  std::vector<double> preds;   // regression value or predicted class index
  std::vector<double> labels;
};

/// Complete samples take the two-modality path, the rest are imputed.
PredictionSet predict(const ModelParams& model, const Dataset& data, ImputeMode mode);

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  std::optional<double> acc2;      // regression only, when any label is nonzero
  std::optional<double> macro_f1;  // classification only
};

Metrics evaluate(const ModelParams& model, const Dataset& data, ImputeMode mode);

/// MAE for regression, macro-F1 for classification.
double validation_metric(const Metrics& m, Task task);
bool improves(double candidate, double best, Task task);

/// Two-sided paired t-test p-value. Identical samples give 1.
double paired_t_test(std::span<const double> a, std::span<const double> b);

enum class Condition {
  kMmAlign,
  kLowerBound,   // single-modality backbone, victim never seen
  kUpperBound,   // both modalities everywhere
  kZeroImpute,   // missing victim replaced by zeros
  kRandomFitter, // fitter never trained
  kNoCon,        // lambda = 0
  kSplitLoop,    // fitter and backbone updates in separate passes
};

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
};

/// The configuration a condition actually trains with, for one seed.
ExperimentConfig condition_config(Condition c, const ExperimentConfig& base, std::uint64_t seed);

/// Masked (or, for the upper bound, unmasked) splits for one seed.
SplitDataset condition_data(Condition c, const Dataset& full, const ExperimentConfig& config);

struct SeedRun {
  std::uint64_t seed = 0;
  Metrics test;
  Metrics val;
  int epochs = 0;
  int best_epoch = 0;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};

struct MetricReport {
  std::string condition;
  Task task = Task::kRegression;
  Setting setting = Setting::kA;
  double p = 0.1;
  Modality victim = Modality::kM2;
  std::vector<SeedRun> runs;
  Summary mae;
  Summary mse;
  std::optional<Summary> acc2;
  std::optional<Summary> macro_f1;
  std::optional<std::string> reference;
  std::optional<double> p_value;  // paired t-test on test MSE against `reference`

  std::vector<double> per_seed(const std::string& metric) const;
};

SeedRun run_seed(Condition c, const Dataset& full, const ExperimentConfig& base, std::uint64_t seed);

/// One training run per seed, executed on up to `threads` workers (0 = all
/// hardware threads) and reported in seed order.
MetricReport run_condition(Condition c, const Dataset& full, const ExperimentConfig& base,
                           const std::vector<std::uint64_t>& seeds, unsigned threads = 0);

/// Fills reference and p_value of `report` from a paired t-test on `metric`.
void attach_t_test(MetricReport& report, const MetricReport& reference,
                   const std::string& metric = "mse");

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricReport& report);
void write_table(std::ostream& os, const std::vector<MetricReport>& reports);

struct SweepReport {
  std::string metric = "mae";
  std::vector<Index> windows;
  std::vector<MetricReport> reports;
};

/// One run_condition per window. Every W must be < the sequence length.
SweepReport window_sweep(Condition c, const Dataset& full, const ExperimentConfig& base,
                         const std::vector<Index>& windows, const std::vector<std::uint64_t>& seeds,
                         unsigned threads = 0);

void write_sweep_csv(std::ostream& os, const SweepReport& sweep);
nlohmann::json to_json(const SweepReport& sweep);

}  // namespace mmalign
