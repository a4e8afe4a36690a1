#pragma once

// Dense f64 arithmetic, activations, initialization and the per-layer
// manual-gradient contract used by every trainable block.
//
// Conventions: sequences are row-major matrices with one timestep per row, and
// linear maps act on the right (y = x W + b), so a weight has shape in x out.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmalign/errors.hpp"

namespace mmalign {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Mask = std::vector<std::uint8_t>;
using Rng = std::mt19937_64;

// Portable draws: the standard distributions are implementation-defined, these
// are not.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);

/// A trainable tensor and its accumulated gradient.
struct GradPair {
  Matrix value;
  Matrix grad;

  GradPair() = default;
  explicit GradPair(Matrix v)
      : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

struct ParamRef {
  std::string name;
  GradPair* param;
};
using ParamList = std::vector<ParamRef>;

void zero_grads(const ParamList& params);

Matrix matmul(const Matrix& a, const Matrix& b);

/// Max-shifted softmax. Entries whose flag in `valid` is 0 get exactly 0; an
/// empty `valid` span means every entry participates.
Vector softmax_row(const Vector& logits, std::span<const std::uint8_t> valid = {});

/// Vector-Jacobian product of softmax_row given its output.
Vector softmax_row_backward(const Vector& probs, const Vector& grad_out);

Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps);

/// Glorot-uniform weight with bound sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Index fan_in, Index fan_out, Rng& rng);

double sigmoid(double x);
// tanh-approximated GELU
double gelu(double x);
double gelu_grad(double x);

class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, Rng& rng);

  Index in_dim() const { return weight.value.rows(); }
  Index out_dim() const { return weight.value.cols(); }

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients and returns d/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  GradPair weight;
  GradPair bias;
};

/// Row-wise layer normalization with learned gain and bias.
class LayerNorm {
 public:
  struct Cache {
    Matrix xhat;
    Vector inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(Index dim, double eps = 1e-5);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  GradPair gain;
  GradPair bias;
  double eps = 1e-5;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index checked_entries = 0;
};

/// Compares analytic gradients against central differences, entry by entry.
///
/// `loss` must evaluate the scalar objective from the current parameter
/// values; `backward` must zero and then fill the gradients of `params`.
/// Relative error per entry is |g - fd| / max(|g|, |fd|, 1e-8). A non-finite
/// analytic or numeric gradient raises NumericalError naming the parameter.
GradCheckReport grad_check(const ParamList& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& backward,
                           double epsilon = 1e-5);

}  // namespace mmalign
