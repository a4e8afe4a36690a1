#include "mmalign/training.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "mmalign/eval.hpp"

namespace mmalign {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void require_finite(double v, const std::string& what, int epoch) {
  if (!std::isfinite(v)) {
    throw NumericalError("non-finite " + what + " in epoch " + std::to_string(epoch));
  }
}

}  // namespace

void Adam::step(const ParamList& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
      v_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ConfigError("optimizer parameter list changed size");

  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params) sq += p.param->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradPair& p = *params[i].param;
    const Matrix g = p.grad * scale;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

void TrainConfig::validate() const {
  if (!(eta_main > 0.0) || !(eta_fit > 0.0)) throw ConfigError("learning rates must be > 0");
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(mu > 0.0)) throw ConfigError("mu must be > 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (window < 0) throw ConfigError("window must be >= 0");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("surviving rate p must lie in (0, 1]");
  if (warm_up_epochs < 0 || patience < 0 || max_epochs < 1) {
    throw ConfigError("epoch counts must be >= 0 (max_epochs >= 1)");
  }
  if (sinkhorn_max_iter < 1) throw ConfigError("sinkhorn_max_iter must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"eta_main", c.eta_main},
          {"eta_fit", c.eta_fit},
          {"batch", c.batch},
          {"lambda", c.lambda},
          {"mu", c.mu},
          {"tau", c.tau},
          {"window", c.window},
          {"warm_up", c.warm_up_epochs},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"p", c.p},
          {"setting", to_string(c.setting)},
          {"seed", c.seed},
          {"fit_loss", c.fit_loss == FitLossMode::kMse ? "mse" : "literal"},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps},
                    {"clip_norm", c.adam.clip_norm}}},
          {"impute", to_string(c.impute)},
          {"random_fitter", c.random_fitter},
          {"split_loop", c.split_loop},
          {"log_domain_retry", c.log_domain_retry},
          {"sinkhorn_max_iter", c.sinkhorn_max_iter}};
}

nlohmann::json to_json(const EpochReport& r) {
  return {{"epoch", r.epoch},
          {"l_main", r.l_main},
          {"l_con", r.l_con},
          {"l_fit", r.l_fit},
          {"val_metric", r.val_metric},
          {"seconds_complete", r.seconds_complete},
          {"seconds_missing", r.seconds_missing},
          {"seconds_eval", r.seconds_eval},
          {"complete_steps", r.complete_steps},
          {"fit_steps", r.fit_steps},
          {"missing_steps", r.missing_steps},
          {"skipped_batches", r.skipped_batches}};
}

Trainer::Trainer(ModelParams& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      rng_(config.seed ^ 0x5deece66dULL),
      theta_opt_(config.eta_main, config.adam),
      psi_opt_(config.eta_fit, config.adam) {
  config_.validate();
  if (config_.window != model_.config.window) {
    throw ConfigError("training window " + std::to_string(config_.window) +
                      " differs from the model window " + std::to_string(model_.config.window));
  }
}

bool Trainer::fitter_active() const {
  return config_.impute == ImputeMode::kAdl && !config_.random_fitter;
}

std::vector<std::vector<std::size_t>> Trainer::batches(std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  std::vector<std::vector<std::size_t>> out;
  const auto b = static_cast<std::size_t>(config_.batch);
  for (std::size_t start = 0; start < n; start += b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  return out;
}

void Trainer::step(StepKind kind) {
  if (hook) hook(kind, false, model_);
  if (kind == StepKind::kFit) {
    psi_opt_.step(model_.psi());
  } else {
    theta_opt_.step(model_.theta());
  }
  if (hook) hook(kind, true, model_);
}

Trainer::BatchStats Trainer::complete_batch(const Dataset& data, const std::vector<std::size_t>& idx,
                                            bool fit_step, bool backbone_step) {
  BatchStats stats;
  const auto n = static_cast<double>(idx.size());
  const Index d = model_.config.d_model;

  std::vector<ForwardCache> caches(idx.size());
  std::vector<Prediction> preds(idx.size());
  std::vector<SharedRepr> z1(idx.size());
  std::vector<SharedRepr> z2(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Sample& s = data[idx[b]];
    if (!s.x2) throw DataError("sample " + s.id + " in the complete split lacks the victim modality");
    CompleteOutput out = forward_complete(s.x1, *s.x2, model_, backbone_step ? &caches[b] : nullptr);
    preds[b] = std::move(out.prediction);
    z1[b] = std::move(out.z1);
    z2[b] = std::move(out.z2);
  }

  if (fit_step) {
    SinkhornOptions opts;
    opts.max_iter = config_.sinkhorn_max_iter;
    opts.log_domain_retry = config_.log_domain_retry;
    std::vector<AlignmentPlan> targets;
    targets.reserve(idx.size());
    try {
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const BandedCost cost = build_cost(z1[b].content(), z2[b].content(), config_.window);
        targets.push_back(sinkhorn(cost, config_.mu, opts).plan);
      }
    } catch (const ConditioningError&) {
      ++skipped_;
      stats.skipped = true;
      return stats;
    }
    zero_grads(model_.psi());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      FitCache fc;
      const WindowPredictions rows = fit_predict(z1[b], model_.fitter, &fc);
      Matrix d_rows;
      stats.fit += fitting_loss(rows, targets[b], config_.fit_loss, &d_rows) / n;
      fit_predict_backward(model_.fitter, fc, d_rows / n);
    }
    stats.fitted = true;
    step(StepKind::kFit);
  }

  if (backbone_step) {
    zero_grads(model_.all());
    std::vector<Prediction> d_preds(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      stats.main += main_loss(preds[b], data[idx[b]].y, &d_preds[b]) / n;
      if (d_preds[b].task == Task::kRegression) {
        d_preds[b].value /= n;
      } else {
        d_preds[b].logits /= n;
      }
    }
    Matrix d_s = Matrix::Zero(static_cast<Index>(idx.size()), d);
    Matrix d_t = d_s;
    if (config_.lambda > 0.0) {
      Matrix s(static_cast<Index>(idx.size()), d);
      Matrix t(static_cast<Index>(idx.size()), d);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        s.row(static_cast<Index>(b)) = pool_content(z1[b]).transpose();
        t.row(static_cast<Index>(b)) = pool_content(z2[b]).transpose();
      }
      ContrastiveResult con = contrastive_loss(s, t, config_.tau);
      stats.con = con.loss;
      d_s = config_.lambda * con.d_s;
      d_t = config_.lambda * con.d_t;
    }
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Vector g1 = d_s.row(static_cast<Index>(b)).transpose();
      const Vector g2 = d_t.row(static_cast<Index>(b)).transpose();
      backward(model_, caches[b], d_preds[b], &g1, &g2);
    }
    step(StepKind::kBackbone);
  }
  return stats;
}

double Trainer::missing_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  const auto n = static_cast<double>(idx.size());
  zero_grads(model_.all());
  double loss = 0.0;
  for (std::size_t i : idx) {
    ForwardCache cache;
    const Prediction pred = forward_missing(data[i].x1, model_, config_.impute, &cache);
    Prediction d_pred;
    loss += main_loss(pred, data[i].y, &d_pred) / n;
    if (d_pred.task == Task::kRegression) {
      d_pred.value /= n;
    } else {
      d_pred.logits /= n;
    }
    backward(model_, cache, d_pred);
  }
  step(StepKind::kBackbone);
  return loss;
}

void Trainer::warm_up(const Dataset& complete) {
  if (config_.warm_up_epochs == 0) return;
  if (complete.empty()) throw DataError("warm-up needs a non-empty complete split");
  for (int e = 0; e < config_.warm_up_epochs; ++e) {
    for (const auto& idx : batches(complete.size())) {
      const BatchStats stats = complete_batch(complete, idx, false, true);
      require_finite(stats.main + stats.con, "warm-up loss", e);
    }
  }
}

EpochReport Trainer::train_epoch(const Dataset& complete, const Dataset& missing) {
  EpochReport report;
  report.epoch = ++epoch_;
  const long skipped_before = skipped_;
  const bool fit = fitter_active();

  auto start = Clock::now();
  double main_sum = 0.0;
  double con_sum = 0.0;
  double fit_sum = 0.0;
  long main_batches = 0;
  if (config_.split_loop) {
    if (fit) {
      for (const auto& idx : batches(complete.size())) {
        const BatchStats stats = complete_batch(complete, idx, true, false);
        if (stats.fitted) {
          fit_sum += stats.fit;
          ++report.fit_steps;
        }
      }
    }
    for (const auto& idx : batches(complete.size())) {
      const BatchStats stats = complete_batch(complete, idx, false, true);
      main_sum += stats.main;
      con_sum += stats.con;
      ++main_batches;
      ++report.complete_steps;
    }
  } else {
    for (const auto& idx : batches(complete.size())) {
      const BatchStats stats = complete_batch(complete, idx, fit, true);
      if (stats.skipped) continue;
      if (stats.fitted) {
        fit_sum += stats.fit;
        ++report.fit_steps;
      }
      main_sum += stats.main;
      con_sum += stats.con;
      ++main_batches;
      ++report.complete_steps;
    }
  }
  report.seconds_complete = seconds_since(start);

  start = Clock::now();
  double missing_sum = 0.0;
  for (const auto& idx : batches(missing.size())) {
    missing_sum += missing_batch(missing, idx);
    ++report.missing_steps;
  }
  report.seconds_missing = seconds_since(start);

  const long total_main = main_batches + report.missing_steps;
  report.l_main = total_main > 0 ? (main_sum + missing_sum) / static_cast<double>(total_main) : 0.0;
  report.l_con = main_batches > 0 ? con_sum / static_cast<double>(main_batches) : 0.0;
  report.l_fit = report.fit_steps > 0 ? fit_sum / static_cast<double>(report.fit_steps) : 0.0;
  report.skipped_batches = skipped_ - skipped_before;
  require_finite(report.l_main, "L_main", report.epoch);
  require_finite(report.l_con, "L_con", report.epoch);
  require_finite(report.l_fit, "L_fit", report.epoch);
  return report;
}

double complete_objective(const ModelParams& model, const Dataset& complete, const TrainConfig& config) {
  if (complete.empty()) throw DataError("objective over an empty complete split");
  const auto b = static_cast<std::size_t>(config.batch);
  double total = 0.0;
  for (std::size_t start = 0; start < complete.size(); start += b) {
    const std::size_t end = std::min(complete.size(), start + b);
    const Index rows = static_cast<Index>(end - start);
    Matrix s(rows, model.config.d_model);
    Matrix t(rows, model.config.d_model);
    for (std::size_t i = start; i < end; ++i) {
      const CompleteOutput out = forward_complete(complete[i].x1, *complete[i].x2, model);
      total += main_loss(out.prediction, complete[i].y);
      s.row(static_cast<Index>(i - start)) = pool_content(out.z1).transpose();
      t.row(static_cast<Index>(i - start)) = pool_content(out.z2).transpose();
    }
    if (config.lambda > 0.0) {
      total += config.lambda * contrastive_loss(s, t, config.tau).loss * static_cast<double>(rows);
    }
  }
  return total / static_cast<double>(complete.size());
}

std::pair<Dataset, Dataset> split_by_presence(const Dataset& train) {
  std::pair<Dataset, Dataset> out;
  for (const auto& s : train) (s.x2 ? out.first : out.second).push_back(s);
  return out;
}

FitResult fit(ModelParams model, const SplitDataset& data, const TrainConfig& config, std::ostream* log,
              const StepHook& hook) {
  config.validate();
  if (data.val.empty()) throw DataError("validation split is empty");
  auto [complete, missing] = split_by_presence(data.train);
  if (config.impute == ImputeMode::kSelf) {
    // The single-modality backbone never sees the victim modality.
    for (auto& s : complete) s.x2.reset();
    missing.insert(missing.end(), complete.begin(), complete.end());
    complete.clear();
  }

  Trainer trainer(model, config);
  trainer.hook = hook;
  trainer.warm_up(complete);

  FitResult result;
  int since_best = 0;
  for (int e = 0; e < config.max_epochs; ++e) {
    EpochReport report = trainer.train_epoch(complete, missing);
    const auto start = Clock::now();
    const Metrics val = evaluate(model, data.val, config.impute);
    report.val_metric = validation_metric(val, model.config.task);
    report.seconds_eval = seconds_since(start);
    require_finite(report.val_metric, "validation metric", report.epoch);
    if (log != nullptr) *log << to_json(report).dump() << '\n';

    if (result.log.empty() || improves(report.val_metric, result.best_val, model.config.task)) {
      result.best = model;
      result.best_val = report.val_metric;
      result.best_epoch = report.epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log.push_back(report);
    if (since_best >= config.patience) break;
  }
  result.skipped_batches = trainer.skipped_batches();
  return result;
}

}  // namespace mmalign
