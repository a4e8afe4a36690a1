#include <doctest.h>

#include <cmath>

#include "mmalign/encoder.hpp"
#include "support/fixtures.hpp"

using namespace mmalign;

namespace {

// Loss = <layer output, r> so every gradient entry is O(1).
GradCheckReport check_layer(TransformerLayer& layer, const Matrix& t0, const Matrix& s0, bool cross) {
  Rng rng(99);
  GradPair t(t0), s(s0);
  Matrix r = fixture::gaussian(t0.rows(), t0.cols(), rng);
  ParamList ps;
  layer.collect("layer", ps);
  ps.push_back({"target", &t});
  if (cross) ps.push_back({"source", &s});
  auto loss = [&] {
    const Matrix& src = cross ? s.value : t.value;
    return (layer.forward(t.value, src).array() * r.array()).sum();
  };
  auto back = [&] {
    zero_grads(ps);
    const Matrix& src = cross ? s.value : t.value;
    TransformerLayer::Cache c;
    layer.forward(t.value, src, &c);
    Matrix dt = Matrix::Zero(t.value.rows(), t.value.cols());
    Matrix ds = Matrix::Zero(src.rows(), src.cols());
    layer.backward(t.value, src, c, r, dt, ds);
    if (cross) {
      t.grad += dt;
      s.grad += ds;
    } else {
      t.grad += dt + ds;
    }
  };
  return grad_check(ps, loss, back);
}

void perturb_layer_norms(TransformerLayer& layer, Rng& rng) {
  for (auto* ln : {&layer.ln1, &layer.ln2}) {
    for (Index i = 0; i < ln->gain.value.cols(); ++i) {
      ln->gain.value(0, i) = 1.0 + 0.2 * standard_normal(rng);
      ln->bias.value(0, i) = 0.2 * standard_normal(rng);
    }
  }
}

}  // namespace

TEST_CASE("single-token layer against a scalar evaluation") {
  Rng rng(1);
  const Index d = 4, dff = 6;
  TransformerLayer layer(d, 2, dff, ResidualVariant::kAsPrinted, rng);
  perturb_layer_norms(layer, rng);
  for (Index j = 0; j < dff; ++j) layer.ff1.bias.value(0, j) = 0.1 * standard_normal(rng);
  Matrix x = fixture::gaussian(1, d, rng);
  Matrix out = layer.forward(x, x);

  // One key: attention weight 1, so MATT(x) = (x Wv) Wo.
  std::vector<double> v(d, 0.0), matt(d, 0.0), zhat(d), hidden(dff), ffn(d);
  for (Index j = 0; j < d; ++j)
    for (Index k = 0; k < d; ++k) v[j] += x(0, k) * layer.attn.wv.value(k, j);
  for (Index j = 0; j < d; ++j)
    for (Index k = 0; k < d; ++k) matt[j] += v[k] * layer.attn.wo.value(k, j);
  for (Index j = 0; j < d; ++j) zhat[j] = matt[j] + x(0, j);
  for (Index j = 0; j < dff; ++j) {
    double a = layer.ff1.bias.value(0, j);
    for (Index k = 0; k < d; ++k) a += zhat[k] * layer.ff1.weight.value(k, j);
    hidden[j] = 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
  }
  for (Index j = 0; j < d; ++j) {
    double a = layer.ff2.bias.value(0, j);
    for (Index k = 0; k < dff; ++k) a += hidden[k] * layer.ff2.weight.value(k, j);
    ffn[j] = a;
  }
  double mean = 0.0, var = 0.0;
  for (double z : zhat) mean += z / d;
  for (double z : zhat) var += (z - mean) * (z - mean) / d;
  for (Index j = 0; j < d; ++j) {
    const double ln = layer.ln1.gain.value(0, j) * (zhat[j] - mean) / std::sqrt(var + layer.ln1.eps) +
                      layer.ln1.bias.value(0, j);
    CHECK(out(0, j) == doctest::Approx(ffn[j] + ln).epsilon(1e-12));
  }
}

TEST_CASE("identical timesteps encode identically without positions") {
  Rng rng(2);
  EncoderConfig cfg;
  cfg.d_in = 3;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 10;
  cfg.max_len = 10;
  cfg.positional = false;
  EncoderParams enc(cfg, rng);
  ModalitySequence x{Modality::kM1, fixture::gaussian(4, 3, rng)};
  x.values.row(2) = x.values.row(1);
  SharedRepr z = encode(x, enc);
  CHECK(z.values.rows() == 5);
  // blocked matrix products may round two equal rows differently in the last bit
  CHECK((z.values.row(2) - z.values.row(3)).cwiseAbs().maxCoeff() <= 1e-13);

  cfg.positional = true;
  EncoderParams with_pos(cfg, rng);
  SharedRepr zp = encode(x, with_pos);
  CHECK((zp.values.row(2) - zp.values.row(3)).norm() > 1e-6);
}

TEST_CASE("attention over identical source vectors returns that vector") {
  Rng rng(3);
  const Index d = 6;
  MultiHeadAttention attn(d, 3, rng);
  attn.wv.value = Matrix::Identity(d, d);
  attn.wo.value = Matrix::Identity(d, d);
  Matrix v = fixture::gaussian(1, d, rng);
  Matrix source = v.replicate(5, 1);
  Matrix out = attn.forward(fixture::gaussian(3, d, rng), source);
  for (Index i = 0; i < 3; ++i) CHECK((out.row(i) - v).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("zero query and key weights give uniform attention") {
  Rng rng(4);
  const Index d = 4;
  MultiHeadAttention attn(d, 2, rng);
  attn.wq.value.setZero();
  attn.wk.value.setZero();
  Matrix src = fixture::gaussian(5, d, rng);
  Matrix out = attn.forward(fixture::gaussian(2, d, rng), src);
  Matrix expected = (src * attn.wv.value).colwise().mean() * attn.wo.value;
  for (Index i = 0; i < 2; ++i) CHECK((out.row(i) - expected).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("zero value projection leaves only the residual and norm paths") {
  Rng rng(5);
  const Index d = 4;
  TransformerLayer layer(d, 2, 8, ResidualVariant::kAsPrinted, rng);
  layer.attn.wq.value.setZero();
  layer.attn.wk.value.setZero();
  layer.attn.wv.value.setZero();
  layer.attn.wo.value = Matrix::Identity(d, d);
  Matrix t = fixture::gaussian(3, d, rng);
  Matrix out = layer.forward(t, fixture::gaussian(4, d, rng));
  Matrix act = layer.ff1.forward(t).unaryExpr([](double a) { return gelu(a); });
  Matrix expected = layer.ff2.forward(act) + layer.ln1.forward(t);
  CHECK((out - expected).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("one head equals textbook scaled dot-product attention") {
  Rng rng(6);
  const Index d = 5;
  MultiHeadAttention attn(d, 1, rng);
  Matrix t = fixture::gaussian(3, d, rng), s = fixture::gaussian(4, d, rng);
  Matrix scores = (t * attn.wq.value) * (s * attn.wk.value).transpose() / std::sqrt(5.0);
  for (Index r = 0; r < scores.rows(); ++r) scores.row(r) = softmax_row(scores.row(r).transpose()).transpose();
  Matrix expected = scores * (s * attn.wv.value) * attn.wo.value;
  CHECK((attn.forward(t, s) - expected).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("heads must divide the model width") {
  Rng rng(7);
  CHECK_THROWS_AS(MultiHeadAttention(6, 4, rng), ConfigError);
}

TEST_CASE("attention block gradients, both residual variants") {
  Rng rng(8);
  for (auto variant : {ResidualVariant::kAsPrinted, ResidualVariant::kStandardPostLN}) {
    TransformerLayer layer(6, 2, 8, variant, rng);
    perturb_layer_norms(layer, rng);
    Matrix t = fixture::gaussian(4, 6, rng), s = fixture::gaussian(5, 6, rng);
    CHECK(check_layer(layer, t, t, false).max_rel_error < 1e-4);
    CHECK(check_layer(layer, t, s, true).max_rel_error < 1e-4);
  }
}

TEST_CASE("full encoder gradient") {
  Rng rng(9);
  EncoderConfig cfg;
  cfg.d_in = 3;
  cfg.d_model = 4;
  cfg.num_heads = 2;
  cfg.d_ff = 6;
  cfg.num_layers = 2;
  cfg.max_len = 8;
  EncoderParams enc(cfg, rng);
  ModalitySequence x{Modality::kM1, fixture::gaussian(5, 3, rng)};
  Matrix r = fixture::gaussian(6, 4, rng);
  ParamList ps;
  enc.collect("enc", ps);
  auto loss = [&] { return (encode(x, enc).values.array() * r.array()).sum(); };
  auto back = [&] {
    zero_grads(ps);
    EncodeCache c;
    encode(x, enc, &c);
    encode_backward(enc, c, r);
  };
  CHECK(grad_check(ps, loss, back).max_rel_error < 1e-4);
}

TEST_CASE("cross stack gradient and length preservation") {
  Rng rng(10);
  FusionStack stack(2, 4, 2, 6, ResidualVariant::kAsPrinted, rng);
  GradPair t(fixture::gaussian(4, 4, rng)), s(fixture::gaussian(6, 4, rng));
  Matrix r = fixture::gaussian(4, 4, rng);
  SharedRepr out = cross_attend(SharedRepr{t.value}, SharedRepr{s.value}, stack);
  CHECK(out.values.rows() == 4);
  ParamList ps;
  stack.collect("stack", ps);
  ps.push_back({"t", &t});
  ps.push_back({"s", &s});
  auto loss = [&] {
    return (cross_attend(SharedRepr{t.value}, SharedRepr{s.value}, stack).values.array() * r.array()).sum();
  };
  auto back = [&] {
    zero_grads(ps);
    CrossCache c;
    cross_attend(SharedRepr{t.value}, SharedRepr{s.value}, stack, &c);
    cross_attend_backward(stack, SharedRepr{s.value}, c, r, t.grad, s.grad);
  };
  CHECK(grad_check(ps, loss, back).max_rel_error < 1e-4);
}

TEST_CASE("width mismatches are configuration errors") {
  Rng rng(11);
  EncoderConfig cfg;
  cfg.d_in = 3;
  cfg.d_model = 4;
  cfg.num_heads = 2;
  cfg.max_len = 8;
  EncoderParams enc(cfg, rng);
  CHECK_THROWS_AS(encode({Modality::kM1, Matrix::Ones(2, 5)}, enc), ConfigError);
  CHECK_THROWS_AS(encode({Modality::kM1, Matrix::Ones(9, 3)}, enc), ConfigError);
  FusionStack stack(1, 4, 2, 6, ResidualVariant::kAsPrinted, rng);
  CHECK_THROWS_AS(cross_attend(SharedRepr{Matrix::Ones(2, 4)}, SharedRepr{Matrix::Ones(2, 3)}, stack),
                  ConfigError);
}
