#include "mmalign/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "mmalign/format.hpp"

namespace mmalign {

namespace {

void check_pair(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionError("predictions and labels differ in length");
  if (a == 0) throw StatisticsError("metric over an empty set");
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

nlohmann::json to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

double mae(std::span<const double> preds, std::span<const double> labels) {
  check_pair(preds.size(), labels.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i] - labels[i]);
  return sum / static_cast<double>(preds.size());
}

double mse(std::span<const double> preds, std::span<const double> labels) {
  check_pair(preds.size(), labels.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += (preds[i] - labels[i]) * (preds[i] - labels[i]);
  return sum / static_cast<double>(preds.size());
}

double acc2(std::span<const double> preds, std::span<const double> labels) {
  check_pair(preds.size(), labels.size());
  std::size_t counted = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 0.0) continue;
    ++counted;
    if (sign(preds[i]) == sign(labels[i])) ++hits;
  }
  if (counted == 0) throw StatisticsError("Acc-2 is undefined when every label is zero");
  return static_cast<double>(hits) / static_cast<double>(counted);
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, int num_classes) {
  check_pair(preds.size(), labels.size());
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fp(tp.size(), 0);
  std::vector<long> fn(tp.size(), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c : {preds[i], labels[i]}) {
      if (c < 0 || c >= num_classes) {
        throw LabelError("class " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
    const auto p = static_cast<std::size_t>(preds[i]);
    const auto y = static_cast<std::size_t>(labels[i]);
    if (p == y) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(num_classes);
}

PredictionSet predict(const ModelParams& model, const Dataset& data, ImputeMode mode) {
  PredictionSet out;
  out.preds.reserve(data.size());
  out.labels.reserve(data.size());
  for (const auto& s : data) {
    const Prediction p = s.x2 && mode != ImputeMode::kSelf ? forward_complete(s.x1, *s.x2, model).prediction
                                                           : forward_missing(s.x1, model, mode);
    out.preds.push_back(p.task == Task::kRegression ? p.value : static_cast<double>(p.predicted_class()));
    out.labels.push_back(s.y);
  }
  return out;
}

Metrics evaluate(const ModelParams& model, const Dataset& data, ImputeMode mode) {
  const PredictionSet set = predict(model, data, mode);
  Metrics m;
  m.mae = mae(set.preds, set.labels);
  m.mse = mse(set.preds, set.labels);
  if (model.config.task == Task::kRegression) {
    if (std::any_of(set.labels.begin(), set.labels.end(), [](double y) { return y != 0.0; })) {
      m.acc2 = acc2(set.preds, set.labels);
    }
  } else {
    std::vector<int> p(set.preds.begin(), set.preds.end());
    std::vector<int> y;
    y.reserve(set.labels.size());
    for (double v : set.labels) y.push_back(static_cast<int>(std::lround(v)));
    m.macro_f1 = macro_f1(p, y, static_cast<int>(model.config.num_classes));
  }
  return m;
}

double validation_metric(const Metrics& m, Task task) {
  return task == Task::kRegression ? m.mae : m.macro_f1.value_or(0.0);
}

bool improves(double candidate, double best, Task task) {
  return task == Task::kRegression ? candidate < best : candidate > best;
}

double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired samples differ in length");
  if (a.size() < 2) throw StatisticsError("paired t-test needs at least two seeds");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  const Summary s = summarize(diff);
  if (s.std == 0.0) return s.mean == 0.0 ? 1.0 : 0.0;
  const double n = static_cast<double>(diff.size());
  const double t = s.mean / (s.std / std::sqrt(n));
  const boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::kMmAlign: return "mm-align";
    case Condition::kLowerBound: return "lb";
    case Condition::kUpperBound: return "ub";
    case Condition::kZeroImpute: return "zero-impute";
    case Condition::kRandomFitter: return "random-fitter";
    case Condition::kNoCon: return "no-con";
    case Condition::kSplitLoop: return "split-loop";
  }
  return "mm-align";
}

Condition condition_from_string(const std::string& s) {
  for (Condition c : {Condition::kMmAlign, Condition::kLowerBound, Condition::kUpperBound,
                      Condition::kZeroImpute, Condition::kRandomFitter, Condition::kNoCon,
                      Condition::kSplitLoop}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown condition '" + s + "'");
}

ExperimentConfig condition_config(Condition c, const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.train.seed = seed;
  cfg.split.seed = seed;
  cfg.train.p = cfg.split.p;
  cfg.train.setting = cfg.split.setting;
  switch (c) {
    case Condition::kMmAlign:
      break;
    case Condition::kLowerBound:
      cfg.train.impute = ImputeMode::kSelf;
      cfg.train.warm_up_epochs = 0;
      cfg.train.lambda = 0.0;
      cfg.train.random_fitter = true;
      break;
    case Condition::kUpperBound:
      cfg.train.random_fitter = true;
      break;
    case Condition::kZeroImpute:
      cfg.train.impute = ImputeMode::kZero;
      cfg.train.random_fitter = true;
      break;
    case Condition::kRandomFitter:
      cfg.train.random_fitter = true;
      break;
    case Condition::kNoCon:
      cfg.train.lambda = 0.0;
      break;
    case Condition::kSplitLoop:
      cfg.train.split_loop = true;
      break;
  }
  return cfg;
}

SplitDataset condition_data(Condition c, const Dataset& full, const ExperimentConfig& config) {
  SplitDataset parts = partition(full, config.split);
  if (c == Condition::kUpperBound) return parts;
  SplitDataset masked = apply_missing(parts, config.split);
  if (c == Condition::kLowerBound) {
    for (Dataset* d : {&masked.train, &masked.val, &masked.test}) {
      for (auto& s : *d) s.x2.reset();
    }
  }
  return masked;
}

std::vector<double> MetricReport::per_seed(const std::string& metric) const {
  std::vector<double> out;
  for (const auto& r : runs) {
    if (metric == "mae") {
      out.push_back(r.test.mae);
    } else if (metric == "mse") {
      out.push_back(r.test.mse);
    } else if (metric == "acc2") {
      out.push_back(r.test.acc2.value_or(0.0));
    } else if (metric == "macro_f1") {
      out.push_back(r.test.macro_f1.value_or(0.0));
    } else {
      throw ConfigError("unknown metric '" + metric + "'");
    }
  }
  return out;
}

SeedRun run_seed(Condition c, const Dataset& full, const ExperimentConfig& base, std::uint64_t seed) {
  const ExperimentConfig cfg = condition_config(c, base, seed);
  const SplitDataset data = condition_data(c, full, cfg);
  FitResult result = fit(ModelParams(cfg.model, seed), data, cfg.train);
  SeedRun run;
  run.seed = seed;
  run.test = evaluate(result.best, data.test, cfg.train.impute);
  run.val = evaluate(result.best, data.val, cfg.train.impute);
  run.epochs = static_cast<int>(result.log.size());
  run.best_epoch = result.best_epoch;
  return run;
}

MetricReport run_condition(Condition c, const Dataset& full, const ExperimentConfig& base,
                           const std::vector<std::uint64_t>& seeds, unsigned threads) {
  if (seeds.empty()) throw ConfigError("run_condition needs at least one seed");
  MetricReport report;
  report.condition = to_string(c);
  report.task = base.model.task;
  report.setting = base.split.setting;
  report.p = base.split.p;
  report.victim = base.split.victim;
  report.runs.resize(seeds.size());

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(seeds.size()));
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        report.runs[i] = run_seed(c, full, base, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  report.mae = summarize(report.per_seed("mae"));
  report.mse = summarize(report.per_seed("mse"));
  if (report.task == Task::kRegression) {
    if (std::all_of(report.runs.begin(), report.runs.end(), [](const SeedRun& r) { return r.test.acc2.has_value(); })) {
      report.acc2 = summarize(report.per_seed("acc2"));
    }
  } else {
    report.macro_f1 = summarize(report.per_seed("macro_f1"));
  }
  return report;
}

void attach_t_test(MetricReport& report, const MetricReport& reference, const std::string& metric) {
  report.reference = reference.condition;
  report.p_value = paired_t_test(report.per_seed(metric), reference.per_seed(metric));
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j = {{"mae", m.mae}, {"mse", m.mse}};
  if (m.acc2) j["acc2"] = *m.acc2;
  if (m.macro_f1) j["macro_f1"] = *m.macro_f1;
  return j;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"test", to_json(run.test)},
                    {"val", to_json(run.val)},
                    {"epochs", run.epochs},
                    {"best_epoch", run.best_epoch}});
  }
  nlohmann::json j = {{"condition", r.condition},
                      {"task", to_string(r.task)},
                      {"setting", to_string(r.setting)},
                      {"p", r.p},
                      {"victim", to_string(r.victim)},
                      {"runs", runs},
                      {"mae", to_json(r.mae)},
                      {"mse", to_json(r.mse)}};
  if (r.acc2) j["acc2"] = to_json(*r.acc2);
  if (r.macro_f1) j["macro_f1"] = to_json(*r.macro_f1);
  if (r.reference) j["reference"] = *r.reference;
  if (r.p_value) j["p_value"] = *r.p_value;
  return j;
}

void write_table(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << std::left << std::setw(16) << "condition" << std::setw(22) << "MAE" << std::setw(22) << "MSE"
     << std::setw(22) << "Acc-2 / F1" << "p" << '\n';
  const auto cell = [](const Summary& s) { return format_fixed(s.mean, 4) + " +/- " + format_fixed(s.std, 4); };
  for (const auto& r : reports) {
    os << std::setw(16) << r.condition << std::setw(22) << cell(r.mae) << std::setw(22) << cell(r.mse);
    if (r.acc2) {
      os << std::setw(22) << cell(*r.acc2);
    } else if (r.macro_f1) {
      os << std::setw(22) << cell(*r.macro_f1);
    } else {
      os << std::setw(22) << "-";
    }
    os << (r.p_value ? format_fixed(*r.p_value, 4) + " vs " + r.reference.value_or("") : std::string("-"))
       << '\n';
  }
}

SweepReport window_sweep(Condition c, const Dataset& full, const ExperimentConfig& base,
                         const std::vector<Index>& windows, const std::vector<std::uint64_t>& seeds,
                         unsigned threads) {
  if (windows.empty()) throw ConfigError("window list is empty");
  Index length = 0;
  for (const auto& s : full) length = std::max(length, s.x1.length());
  for (Index w : windows) {
    if (w < 0) throw ConfigError("window must be >= 0");
    if (!full.empty() && w >= length) {
      throw ConfigError("window " + std::to_string(w) + " is not below the sequence length " +
                        std::to_string(length));
    }
  }
  SweepReport sweep;
  sweep.metric = base.model.task == Task::kRegression ? "mae" : "macro_f1";
  for (Index w : windows) {
    ExperimentConfig cfg = base;
    cfg.model.window = w;
    cfg.train.window = w;
    sweep.windows.push_back(w);
    sweep.reports.push_back(run_condition(c, full, cfg, seeds, threads));
  }
  return sweep;
}

void write_sweep_csv(std::ostream& os, const SweepReport& sweep) {
  os << "W,mean,std\n";
  for (std::size_t i = 0; i < sweep.windows.size(); ++i) {
    const MetricReport& r = sweep.reports[i];
    const Summary s = sweep.metric == "mae" ? r.mae : r.macro_f1.value_or(Summary{});
    os << sweep.windows[i] << ',' << format_fixed(s.mean, 9) << ',' << format_fixed(s.std, 9) << '\n';
  }
}

nlohmann::json to_json(const SweepReport& sweep) {
  nlohmann::json series = nlohmann::json::array();
  for (std::size_t i = 0; i < sweep.windows.size(); ++i) {
    nlohmann::json entry = to_json(sweep.reports[i]);
    entry["W"] = sweep.windows[i];
    series.push_back(std::move(entry));
  }
  return {{"metric", sweep.metric}, {"series", series}};
}

}  // namespace mmalign
