#include "mmalign/model.hpp"

#include <cmath>

namespace mmalign {

std::string to_string(Task t) { return t == Task::kRegression ? "regression" : "classification"; }

std::string to_string(ImputeMode m) {
  switch (m) {
    case ImputeMode::kAdl: return "adl";
    case ImputeMode::kZero: return "zero";
    case ImputeMode::kSelf: return "self";
  }
  return "adl";
}

OutputHead::OutputHead(Index in, Index hidden_dim, Index out_dim, Rng& rng)
    : hidden(in, hidden_dim, rng), out(hidden_dim, out_dim, rng) {}

void OutputHead::collect(const std::string& prefix, ParamList& list) {
  hidden.collect(prefix + "/hidden", list);
  out.collect(prefix + "/out", list);
}

ModelParams::ModelParams(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.task == Task::kClassification && cfg.num_classes < 2) {
    throw ConfigError("classification needs at least two classes");
  }
  Rng rng(seed);
  EncoderConfig e1{cfg.d_in1, cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.encoder_layers,
                   cfg.max_len, cfg.variant, cfg.positional};
  EncoderConfig e2 = e1;
  e2.d_in = cfg.d_in2;
  enc1 = EncoderParams(e1, rng);
  enc2 = EncoderParams(e2, rng);
  fuse12 = FusionStack(cfg.fusion_layers, cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.variant, rng);
  fuse21 = FusionStack(cfg.fusion_layers, cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.variant, rng);
  if (cfg.fusion_positional) {
    fusion_pos = GradPair(xavier_uniform(cfg.max_len, cfg.d_model, rng));
  }
  head = OutputHead(2 * cfg.d_model, cfg.head_hidden, cfg.output_dim(), rng);
  fitter = FitterParams(cfg.d_model, cfg.d_model, cfg.window, rng);
}

ParamList ModelParams::theta() {
  ParamList list;
  enc1.collect("theta_enc/m1", list);
  enc2.collect("theta_enc/m2", list);
  fuse12.collect("theta_fu/12", list);
  fuse21.collect("theta_fu/21", list);
  if (config.fusion_positional) list.push_back({"theta_fu/pos", &fusion_pos});
  head.collect("theta_out", list);
  return list;
}

ParamList ModelParams::psi() {
  ParamList list;
  fitter.collect("psi", list);
  return list;
}

ParamList ModelParams::all() {
  ParamList list = theta();
  ParamList p = psi();
  list.insert(list.end(), p.begin(), p.end());
  return list;
}

int Prediction::predicted_class() const {
  if (task == Task::kRegression) return 0;
  Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

Prediction fuse_and_predict(const SharedRepr& z1, const SharedRepr& z2, const ModelParams& params,
                            ForwardCache* cache) {
  if (z1.values.rows() != z2.values.rows()) {
    throw DimensionError("fusion operands differ in length");
  }
  const Index d = params.config.d_model;
  SharedRepr p1 = z1;
  SharedRepr p2 = z2;
  if (params.config.fusion_positional) {
    const Index rows = z1.values.rows();
    if (rows > params.fusion_pos.value.rows()) throw ConfigError("sequence longer than max_len");
    p1.values += params.fusion_pos.value.topRows(rows);
    p2.values += params.fusion_pos.value.topRows(rows);
  }
  SharedRepr f12 = cross_attend(p2, p1, params.fuse12, cache != nullptr ? &cache->fuse12 : nullptr);
  SharedRepr f21 = cross_attend(p1, p2, params.fuse21, cache != nullptr ? &cache->fuse21 : nullptr);
  Matrix head_in(1, 2 * d);
  head_in.leftCols(d) = f12.values.row(0);
  head_in.rightCols(d) = f21.values.row(0);
  Matrix act = params.head.hidden.forward(head_in).array().tanh();
  Matrix out = params.head.out.forward(act);

  Prediction pred;
  pred.task = params.config.task;
  if (pred.task == Task::kRegression) {
    pred.value = out(0, 0);
  } else {
    pred.logits = out.row(0).transpose();
  }
  if (cache != nullptr) {
    cache->fused_z1 = std::move(p1);
    cache->fused_z2 = std::move(p2);
    cache->head_in = std::move(head_in);
    cache->head_act = std::move(act);
  }
  return pred;
}

CompleteOutput forward_complete(const ModalitySequence& x1, const ModalitySequence& x2,
                                const ModelParams& params, ForwardCache* cache) {
  if (x1.length() != x2.length()) {
    throw DataError("alignment precondition: modality lengths differ (" +
                    std::to_string(x1.length()) + " vs " + std::to_string(x2.length()) + ")");
  }
  SharedRepr z1 = encode(x1, params.enc1, cache != nullptr ? &cache->enc1 : nullptr);
  SharedRepr z2 = encode(x2, params.enc2, cache != nullptr ? &cache->enc2 : nullptr);
  Prediction pred = fuse_and_predict(z1, z2, params, cache);
  if (cache != nullptr) {
    cache->missing = false;
    cache->plan.reset();
    cache->z1 = z1;
    cache->z2 = z2;
  }
  return CompleteOutput{std::move(pred), std::move(z1), std::move(z2)};
}

Prediction forward_missing(const ModalitySequence& x1, const ModelParams& params, ImputeMode mode,
                           ForwardCache* cache) {
  SharedRepr z1 = encode(x1, params.enc1, cache != nullptr ? &cache->enc1 : nullptr);
  SharedRepr z2;
  std::optional<AlignmentPlan> plan;
  switch (mode) {
    case ImputeMode::kAdl: {
      const WindowPredictions rows = fit_predict(z1, params.fitter);
      plan = reconstruct_plan(rows, params.config.renormalize_columns);
      z2 = impute(*plan, z1, params.enc2.cls.value);
      break;
    }
    case ImputeMode::kZero:
      z2.values = Matrix::Zero(z1.values.rows(), z1.values.cols());
      z2.values.row(0) = params.enc2.cls.value.row(0);
      break;
    case ImputeMode::kSelf:
      z2 = z1;
      break;
  }
  Prediction pred = fuse_and_predict(z1, z2, params, cache);
  if (cache != nullptr) {
    cache->missing = true;
    cache->mode = mode;
    cache->plan = std::move(plan);
    cache->z1 = std::move(z1);
    cache->z2 = std::move(z2);
  }
  return pred;
}

void backward(ModelParams& params, const ForwardCache& cache, const Prediction& d_pred,
              const Vector* d_pool1, const Vector* d_pool2) {
  const Index d = params.config.d_model;
  Matrix d_out(1, params.config.output_dim());
  if (d_pred.task == Task::kRegression) {
    d_out(0, 0) = d_pred.value;
  } else {
    d_out.row(0) = d_pred.logits.transpose();
  }
  Matrix d_act = params.head.out.backward(cache.head_act, d_out);
  Matrix d_pre = d_act.array() * (1.0 - cache.head_act.array().square());
  Matrix d_head_in = params.head.hidden.backward(cache.head_in, d_pre);

  const Index rows = cache.z1.values.rows();
  Matrix d_z1 = Matrix::Zero(rows, d);
  Matrix d_z2 = Matrix::Zero(rows, d);
  Matrix d_f12 = Matrix::Zero(rows, d);
  Matrix d_f21 = Matrix::Zero(rows, d);
  d_f12.row(0) = d_head_in.leftCols(d);
  d_f21.row(0) = d_head_in.rightCols(d);
  cross_attend_backward(params.fuse12, cache.fused_z1, cache.fuse12, d_f12, d_z2, d_z1);
  cross_attend_backward(params.fuse21, cache.fused_z2, cache.fuse21, d_f21, d_z1, d_z2);
  if (params.config.fusion_positional) {
    params.fusion_pos.grad.topRows(rows) += d_z1 + d_z2;
  }

  const Index l = rows - 1;
  if (d_pool1 != nullptr) d_z1.bottomRows(l).rowwise() += d_pool1->transpose() / static_cast<double>(l);
  if (d_pool2 != nullptr) d_z2.bottomRows(l).rowwise() += d_pool2->transpose() / static_cast<double>(l);

  if (!cache.missing) {
    encode_backward(params.enc1, cache.enc1, d_z1);
    encode_backward(params.enc2, cache.enc2, d_z2);
    return;
  }
  switch (cache.mode) {
    case ImputeMode::kAdl:
      params.enc2.cls.grad.row(0) += d_z2.row(0);
      d_z1 += impute_backward(*cache.plan, d_z2);
      break;
    case ImputeMode::kZero:
      params.enc2.cls.grad.row(0) += d_z2.row(0);
      break;
    case ImputeMode::kSelf:
      d_z1 += d_z2;
      break;
  }
  encode_backward(params.enc1, cache.enc1, d_z1);
}

double main_loss(const Prediction& pred, double label, Prediction* d_pred) {
  if (pred.task == Task::kRegression) {
    const double diff = pred.value - label;
    if (d_pred != nullptr) {
      d_pred->task = Task::kRegression;
      d_pred->value = 2.0 * diff;
    }
    return diff * diff;
  }
  const Index classes = pred.logits.size();
  const double rounded = std::round(label);
  if (rounded != label || rounded < 0 || rounded >= static_cast<double>(classes)) {
    throw LabelError("class index " + std::to_string(label) + " outside [0, " +
                     std::to_string(classes) + ")");
  }
  const auto target = static_cast<Index>(rounded);
  const Vector probs = softmax_row(pred.logits);
  if (d_pred != nullptr) {
    d_pred->task = Task::kClassification;
    d_pred->logits = probs;
    d_pred->logits[target] -= 1.0;
  }
  const double m = pred.logits.maxCoeff();
  const double lse = m + std::log((pred.logits.array() - m).exp().sum());
  return lse - pred.logits[target];
}

Vector pool_content(const SharedRepr& z) {
  return z.content().colwise().mean().transpose();
}

ContrastiveResult contrastive_loss(const Matrix& s, const Matrix& t, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be > 0");
  if (s.rows() != t.rows() || s.cols() != t.cols()) {
    throw DimensionError("contrastive operands differ in shape");
  }
  const Index n = s.rows();
  if (n < 1) throw DataError("contrastive loss over an empty batch");

  const Matrix logits = s * t.transpose() / tau;
  Matrix d_logits = Matrix::Zero(n, n);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    loss += m + std::log(z) - logits(i, i);
    d_logits.row(i) = e / z;
    d_logits(i, i) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  d_logits *= inv_n / tau;
  ContrastiveResult result;
  result.loss = loss * inv_n;
  result.d_s = d_logits * t;
  result.d_t = d_logits.transpose() * s;
  return result;
}

}  // namespace mmalign
