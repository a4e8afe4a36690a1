#include "mmalign/encoder.hpp"

#include <cmath>

namespace mmalign {

std::string to_string(Modality m) { return m == Modality::kM1 ? "m1" : "m2"; }

MultiHeadAttention::MultiHeadAttention(Index d_model, Index heads, Rng& rng)
    : wq(xavier_uniform(d_model, d_model, rng)),
      wk(xavier_uniform(d_model, d_model, rng)),
      wv(xavier_uniform(d_model, d_model, rng)),
      wo(xavier_uniform(d_model, d_model, rng)),
      num_heads(heads) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                      std::to_string(heads));
  }
}

Matrix MultiHeadAttention::forward(const Matrix& target, const Matrix& source, Cache* cache) const {
  const Index d = wq.value.rows();
  if (target.cols() != d || source.cols() != d) {
    throw ConfigError("attention width " + std::to_string(d) + " does not match inputs");
  }
  const Index dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix q = target * wq.value;
  Matrix k = source * wk.value;
  Matrix v = source * wv.value;
  Matrix heads(target.rows(), d);
  std::vector<Matrix> probs;
  probs.reserve(static_cast<std::size_t>(num_heads));
  for (Index h = 0; h < num_heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    for (Index r = 0; r < scores.rows(); ++r) {
      const double m = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - m).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    heads.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    probs.push_back(std::move(scores));
  }
  Matrix out = heads * wo.value;
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->heads = std::move(heads);
  }
  return out;
}

void MultiHeadAttention::backward(const Matrix& target, const Matrix& source, const Cache& cache,
                                  const Matrix& d_out, Matrix& d_target, Matrix& d_source) {
  const Index d = wq.value.rows();
  const Index dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  wo.grad.noalias() += cache.heads.transpose() * d_out;
  const Matrix d_heads = d_out * wo.value.transpose();

  Matrix dq(target.rows(), d);
  Matrix dk(source.rows(), d);
  Matrix dv(source.rows(), d);
  for (Index h = 0; h < num_heads; ++h) {
    const Matrix& p = cache.probs[static_cast<std::size_t>(h)];
    const auto dho = d_heads.middleCols(h * dh, dh);
    Matrix dp = dho * cache.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * dho;
    // softmax rows: ds = p * (dp - <p, dp>)
    Matrix ds(p.rows(), p.cols());
    for (Index r = 0; r < p.rows(); ++r) {
      const double inner = p.row(r).dot(dp.row(r));
      ds.row(r) = p.row(r).array() * (dp.row(r).array() - inner);
    }
    ds *= scale;
    dq.middleCols(h * dh, dh) = ds * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * cache.q.middleCols(h * dh, dh);
  }

  wq.grad.noalias() += target.transpose() * dq;
  wk.grad.noalias() += source.transpose() * dk;
  wv.grad.noalias() += source.transpose() * dv;
  d_target.noalias() += dq * wq.value.transpose();
  d_source.noalias() += dk * wk.value.transpose();
  d_source.noalias() += dv * wv.value.transpose();
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "/wq", &wq});
  out.push_back({prefix + "/wk", &wk});
  out.push_back({prefix + "/wv", &wv});
  out.push_back({prefix + "/wo", &wo});
}

TransformerLayer::TransformerLayer(Index d_model, Index num_heads, Index d_ff,
                                   ResidualVariant v, Rng& rng)
    : attn(d_model, num_heads, rng),
      ln1(d_model),
      ln2(d_model),
      ff1(d_model, d_ff, rng),
      ff2(d_ff, d_model, rng),
      variant(v) {}

Matrix TransformerLayer::ffn(const Matrix& x, Cache* cache) const {
  Matrix pre = ff1.forward(x);
  Matrix act = pre.unaryExpr([](double a) { return gelu(a); });
  Matrix out = ff2.forward(act);
  if (cache != nullptr) {
    cache->ffn_in = x;
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
  }
  return out;
}

Matrix TransformerLayer::ffn_backward(const Cache& cache, const Matrix& d_out) {
  Matrix d_act = ff2.backward(cache.ffn_act, d_out);
  Matrix d_pre = d_act.array() * cache.ffn_pre.unaryExpr([](double a) { return gelu_grad(a); }).array();
  return ff1.backward(cache.ffn_in, d_pre);
}

Matrix TransformerLayer::forward(const Matrix& target, const Matrix& source, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  Matrix a = attn.forward(target, source, &c->attn) + target;
  if (variant == ResidualVariant::kAsPrinted) {
    Matrix out = ffn(a, c) + ln1.forward(a, &c->ln1);
    c->zhat = std::move(a);
    return out;
  }
  Matrix normed = ln1.forward(a, &c->ln1);
  c->zhat = std::move(a);
  c->post_sum = normed + ffn(normed, c);
  return ln2.forward(c->post_sum, &c->ln2);
}

void TransformerLayer::backward(const Matrix& target, const Matrix& source, const Cache& cache,
                                const Matrix& d_out, Matrix& d_target, Matrix& d_source) {
  Matrix d_zhat;
  if (variant == ResidualVariant::kAsPrinted) {
    d_zhat = ffn_backward(cache, d_out) + ln1.backward(cache.ln1, d_out);
  } else {
    const Matrix d_sum = ln2.backward(cache.ln2, d_out);
    const Matrix d_normed = d_sum + ffn_backward(cache, d_sum);
    d_zhat = ln1.backward(cache.ln1, d_normed);
  }
  d_target += d_zhat;
  attn.backward(target, source, cache.attn, d_zhat, d_target, d_source);
}

void TransformerLayer::collect(const std::string& prefix, ParamList& out) {
  attn.collect(prefix + "/attn", out);
  ln1.collect(prefix + "/ln1", out);
  if (variant == ResidualVariant::kStandardPostLN) ln2.collect(prefix + "/ln2", out);
  ff1.collect(prefix + "/ff1", out);
  ff2.collect(prefix + "/ff2", out);
}

EncoderParams::EncoderParams(const EncoderConfig& cfg, Rng& rng)
    : config(cfg),
      input_proj(cfg.d_in, cfg.d_model, rng),
      cls(xavier_uniform(1, cfg.d_model, rng)),
      pos(xavier_uniform(cfg.max_len, cfg.d_model, rng)) {
  if (cfg.d_in < 1 || cfg.d_model < 1 || cfg.max_len < 2) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (!cfg.positional) pos.value.setZero();
  for (Index i = 0; i < cfg.num_layers; ++i) {
    layers.emplace_back(cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.variant, rng);
  }
}

void EncoderParams::collect(const std::string& prefix, ParamList& out) {
  input_proj.collect(prefix + "/input_proj", out);
  out.push_back({prefix + "/cls", &cls});
  if (config.positional) out.push_back({prefix + "/pos", &pos});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + "/layer" + std::to_string(i), out);
  }
}

SharedRepr encode(const ModalitySequence& x, const EncoderParams& params, EncodeCache* cache) {
  const auto& cfg = params.config;
  if (x.dim() != cfg.d_in) {
    throw ConfigError("encoder expects d_in " + std::to_string(cfg.d_in) + ", got " +
                      std::to_string(x.dim()));
  }
  if (x.length() < 1) throw DataError("empty modality sequence");
  if (x.length() + 1 > cfg.max_len) {
    throw ConfigError("sequence length " + std::to_string(x.length()) +
                      " exceeds the positional table");
  }
  const Index l = x.length();
  Matrix h(l + 1, cfg.d_model);
  h.row(0) = params.cls.value.row(0);
  h.bottomRows(l) = params.input_proj.forward(x.values);
  if (cfg.positional) h += params.pos.value.topRows(l + 1);

  if (cache != nullptr) {
    cache->x = x.values;
    cache->layer_inputs.clear();
    cache->layers.assign(params.layers.size(), {});
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (cache != nullptr) cache->layer_inputs.push_back(h);
    h = params.layers[i].forward(h, h, cache != nullptr ? &cache->layers[i] : nullptr);
  }
  return SharedRepr{std::move(h)};
}

void encode_backward(EncoderParams& params, const EncodeCache& cache, const Matrix& d_z) {
  Matrix d_h = d_z;
  for (std::size_t n = params.layers.size(); n-- > 0;) {
    const Matrix& input = cache.layer_inputs[n];
    Matrix d_in = Matrix::Zero(input.rows(), input.cols());
    Matrix d_src = Matrix::Zero(input.rows(), input.cols());
    params.layers[n].backward(input, input, cache.layers[n], d_h, d_in, d_src);
    d_h = d_in + d_src;
  }
  const Index l = cache.x.rows();
  if (params.config.positional) params.pos.grad.topRows(l + 1) += d_h;
  params.cls.grad.row(0) += d_h.row(0);
  params.input_proj.backward(cache.x, d_h.bottomRows(l));
}

FusionStack::FusionStack(Index depth, Index d_model, Index num_heads, Index d_ff,
                         ResidualVariant variant, Rng& rng) {
  for (Index i = 0; i < depth; ++i) layers.emplace_back(d_model, num_heads, d_ff, variant, rng);
}

void FusionStack::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + "/layer" + std::to_string(i), out);
  }
}

SharedRepr cross_attend(const SharedRepr& target, const SharedRepr& source,
                        const FusionStack& stack, CrossCache* cache) {
  if (target.dim() != source.dim()) throw ConfigError("cross-attention width mismatch");
  Matrix h = target.values;
  if (cache != nullptr) {
    cache->layer_inputs.clear();
    cache->layers.assign(stack.layers.size(), {});
  }
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    if (cache != nullptr) cache->layer_inputs.push_back(h);
    h = stack.layers[i].forward(h, source.values, cache != nullptr ? &cache->layers[i] : nullptr);
  }
  return SharedRepr{std::move(h)};
}

void cross_attend_backward(FusionStack& stack, const SharedRepr& source, const CrossCache& cache,
                           const Matrix& d_out, Matrix& d_target, Matrix& d_source) {
  Matrix d_h = d_out;
  for (std::size_t n = stack.layers.size(); n-- > 0;) {
    const Matrix& input = cache.layer_inputs[n];
    Matrix d_in = Matrix::Zero(input.rows(), input.cols());
    stack.layers[n].backward(input, source.values, cache.layers[n], d_h, d_in, d_source);
    d_h = std::move(d_in);
  }
  d_target += d_h;
}

}  // namespace mmalign
