#include "mmalign/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mmalign {

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

double standard_normal(Rng& rng) {
  // Box-Muller, discarding the second variate to stay stateless.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.param->zero_grad();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " by " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  return a * b;
}

Vector softmax_row(const Vector& logits, std::span<const std::uint8_t> valid) {
  const Index n = logits.size();
  if (!valid.empty() && static_cast<Index>(valid.size()) != n) {
    throw DimensionError("softmax mask length " + std::to_string(valid.size()) +
                         " vs " + std::to_string(n));
  }
  auto is_valid = [&](Index i) { return valid.empty() || valid[i] != 0; };

  double max_logit = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (Index i = 0; i < n; ++i) {
    if (is_valid(i)) {
      max_logit = std::max(max_logit, logits[i]);
      any = true;
    }
  }
  if (!any) throw DataError("softmax over an empty support (every entry masked)");

  Vector out = Vector::Zero(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (is_valid(i)) {
      out[i] = std::exp(logits[i] - max_logit);
      total += out[i];
    }
  }
  out /= total;
  return out;
}

Vector softmax_row_backward(const Vector& probs, const Vector& grad_out) {
  const double inner = probs.dot(grad_out);
  return (probs.array() * (grad_out.array() - inner)).matrix();
}

Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps) {
  if (gain.size() != v.size() || bias.size() != v.size()) {
    throw DimensionError("layer_norm affine parameters do not match input width");
  }
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  const double inv_std = 1.0 / std::sqrt(var + eps);
  return ((v.array() - mean) * inv_std * gain.array() + bias.array()).matrix();
}

Matrix xavier_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -a, a);
  return m;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(xavier_uniform(in, out, rng)), bias(Matrix::Zero(1, out)) {}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.rows()) {
    throw DimensionError("linear expects width " + std::to_string(weight.value.rows()) +
                         ", got " + std::to_string(x.cols()));
  }
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "/weight", &weight});
  out.push_back({prefix + "/bias", &bias});
}

LayerNorm::LayerNorm(Index dim, double eps_)
    : gain(Matrix::Ones(1, dim)), bias(Matrix::Zero(1, dim)), eps(eps_) {}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Index n = x.rows();
  const Index d = x.cols();
  if (d != gain.value.cols()) throw DimensionError("layer norm width mismatch");
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std[i];
  }
  Matrix y = xhat.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += bias.value.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Index n = dy.rows();
  const auto d = static_cast<double>(dy.cols());
  gain.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  bias.grad.row(0) += dy.colwise().sum();
  Matrix dx(n, dy.cols());
  for (Index i = 0; i < n; ++i) {
    const auto dxhat = (dy.row(i).array() * gain.value.row(0).array()).eval();
    const double sum_dxhat = dxhat.sum();
    const double sum_dxhat_xhat = (dxhat * cache.xhat.row(i).array()).sum();
    dx.row(i) = cache.inv_std[i] / d *
                (d * dxhat - sum_dxhat - cache.xhat.row(i).array() * sum_dxhat_xhat);
  }
  return dx;
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "/gain", &gain});
  out.push_back({prefix + "/bias", &bias});
}

GradCheckReport grad_check(const ParamList& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& backward,
                           double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw ConfigError("grad_check epsilon must lie in (0, 1e-3]");
  }
  GradCheckReport report;
  if (params.empty()) return report;

  backward();
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p.param->grad.allFinite()) {
      throw NumericalError("non-finite analytic gradient in " + p.name);
    }
    analytic.push_back(p.param->grad);
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k].param->value;
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + epsilon;
      const double up = loss();
      value.data()[i] = saved - epsilon;
      const double down = loss();
      value.data()[i] = saved;

      const double fd = (up - down) / (2.0 * epsilon);
      if (!std::isfinite(fd)) {
        throw NumericalError("non-finite numeric gradient in " + params[k].name);
      }
      const double g = analytic[k].data()[i];
      // below 1e-6 the difference quotient is mostly roundoff (~1e-11), so small entries get an absolute 1e-10
      const double denom = std::max({std::abs(g), std::abs(fd), 1e-6});
      const double rel = std::abs(g - fd) / denom;
      ++report.checked_entries;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = params[k].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace mmalign
