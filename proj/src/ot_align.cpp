#include "mmalign/ot_align.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mmalign/format.hpp"

namespace mmalign {

Mask band_mask(Index length, Index window) {
  const Index width = 2 * window + 1;
  Mask mask(static_cast<std::size_t>(length * width), 0);
  for (Index i = 0; i < length; ++i) {
    for (Index k = 0; k < width; ++k) {
      const Index j = i - window + k;
      mask[i * width + k] = (j >= 0 && j < length) ? 1 : 0;
    }
  }
  return mask;
}

Index valid_slot_count(Index length, Index window) {
  Index total = 0;
  for (Index i = 0; i < length; ++i) {
    total += std::min(i + window, length - 1) - std::max(i - window, Index{0}) + 1;
  }
  return total;
}

Vector AlignmentPlan::row_sums() const { return band.rowwise().sum(); }

Vector AlignmentPlan::col_sums() const {
  Vector sums = Vector::Zero(length);
  for (Index i = 0; i < length; ++i) {
    for (Index k = 0; k < width(); ++k) {
      const Index j = i - window + k;
      if (j >= 0 && j < length) sums[j] += band(i, k);
    }
  }
  return sums;
}

Matrix AlignmentPlan::dense() const {
  Matrix out = Matrix::Zero(length, length);
  for (Index i = 0; i < length; ++i) {
    for (Index k = 0; k < width(); ++k) {
      const Index j = i - window + k;
      if (j >= 0 && j < length) out(i, j) = band(i, k);
    }
  }
  return out;
}

BandedCost build_cost(const Matrix& z1, const Matrix& z2, Index window) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw DimensionError("cost operands must share length and width");
  }
  if (z1.rows() < 1) throw DimensionError("cost needs at least one timestep");
  if (window < 0) throw ConfigError("window must be >= 0");

  BandedCost cost;
  cost.length = z1.rows();
  cost.window = window;
  cost.valid = band_mask(cost.length, window);
  cost.band = Matrix::Zero(cost.length, cost.width());

  Vector n1 = z1.rowwise().norm();
  Vector n2 = z2.rowwise().norm();
  for (Index i = 0; i < cost.length; ++i) {
    if (n1[i] == 0.0) throw DegenerateError("zero-norm vector at source position " + std::to_string(i));
    if (n2[i] == 0.0) throw DegenerateError("zero-norm vector at target position " + std::to_string(i));
  }
  for (Index i = 0; i < cost.length; ++i) {
    for (Index k = 0; k < cost.width(); ++k) {
      if (!cost.is_valid(i, k)) continue;
      const Index j = cost.column(i, k);
      const double cosine = z1.row(i).dot(z2.row(j)) / (n1[i] * n2[j]);
      cost.band(i, k) = 1.0 - std::clamp(cosine, -1.0, 1.0);
    }
  }
  return cost;
}

namespace {

// (K v)_i over the band.
void apply_kernel(const BandedCost& cost, const Matrix& kernel, const Vector& v, Vector& out) {
  const Index w = cost.width();
  for (Index i = 0; i < cost.length; ++i) {
    double acc = 0.0;
    for (Index k = 0; k < w; ++k) {
      if (cost.is_valid(i, k)) acc += kernel(i, k) * v[cost.column(i, k)];
    }
    out[i] = acc;
  }
}

// (K^T u)_j over the band.
void apply_kernel_transposed(const BandedCost& cost, const Matrix& kernel, const Vector& u,
                             Vector& out) {
  const Index w = cost.width();
  out.setZero();
  for (Index i = 0; i < cost.length; ++i) {
    for (Index k = 0; k < w; ++k) {
      if (cost.is_valid(i, k)) out[cost.column(i, k)] += kernel(i, k) * u[i];
    }
  }
}

double violation_of(const AlignmentPlan& plan) {
  const Vector rows = plan.row_sums();
  const Vector cols = plan.col_sums();
  return std::max((rows.array() - 1.0).abs().maxCoeff(), (cols.array() - 1.0).abs().maxCoeff());
}

AlignmentPlan scaled_plan(const BandedCost& cost, const SinkhornState& state) {
  AlignmentPlan plan{cost.length, cost.window, Matrix::Zero(cost.length, cost.width())};
  for (Index i = 0; i < cost.length; ++i) {
    for (Index k = 0; k < cost.width(); ++k) {
      if (cost.is_valid(i, k)) {
        plan.band(i, k) = state.u[i] * state.kernel(i, k) * state.v[cost.column(i, k)];
      }
    }
  }
  return plan;
}

// One safeguarded Newton step on f = log u for the semi-dual
//   G(f) = sum_j log (K^T e^f)_j - sum_i f_i,
// whose gradient is (row sums - 1) once v = 1 / (K^T u). The Hessian
// diag(r) - P P^T is singular along the all-ones direction; a rank-one term
// fixes the gauge. The step is halved until the violation drops, and dropped
// entirely if it never does.
void newton_correction(const BandedCost& cost, SinkhornState& state, AlignmentPlan& plan) {
  const Index l = cost.length;
  const Matrix dense = plan.dense();
  const Vector rows = dense.rowwise().sum();
  Matrix hessian = -dense * dense.transpose();
  hessian.diagonal() += rows;
  hessian.array() += 1.0 / static_cast<double>(l);
  const Vector step = -hessian.ldlt().solve(rows - Vector::Ones(l));
  if (!step.allFinite()) return;

  // Merit is the dual objective sum(log u) + sum(log v) (columns are exact), which
  // the Newton direction always ascends; the violation alone can stall on
  // nearly decoupled bands.
  auto dual = [](const SinkhornState& s) { return s.u.array().log().sum() + s.v.array().log().sum(); };
  const double d0 = dual(state);
  const double slope = (Vector::Ones(l) - rows).dot(step);
  SinkhornState trial = state;
  Vector ktu(l);
  for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
    trial.u = state.u.array() * (alpha * step).array().exp();
    apply_kernel_transposed(cost, state.kernel, trial.u, ktu);
    trial.v = ktu.cwiseInverse();
    if (!trial.u.allFinite() || !trial.v.allFinite() || (trial.v.array() <= 0.0).any()) continue;
    if (dual(trial) < d0 + 1e-4 * alpha * slope) continue;
    AlignmentPlan candidate = scaled_plan(cost, trial);
    state.u = std::move(trial.u);
    state.v = std::move(trial.v);
    state.violation = violation_of(candidate);
    plan = std::move(candidate);
    return;
  }
}

double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

SinkhornResult sinkhorn_log_domain(const BandedCost& cost, double mu, const SinkhornOptions& options) {
  const Index l = cost.length;
  const Index w = cost.width();
  Vector f = Vector::Zero(l);
  Vector g = Vector::Zero(l);
  SinkhornResult result;
  result.log_domain = true;

  auto build_plan = [&] {
    AlignmentPlan plan{l, cost.window, Matrix::Zero(l, w)};
    for (Index i = 0; i < l; ++i) {
      for (Index k = 0; k < w; ++k) {
        if (cost.is_valid(i, k)) {
          plan.band(i, k) = std::exp(f[i] - cost.band(i, k) / mu + g[cost.column(i, k)]);
        }
      }
    }
    return plan;
  };

  std::vector<std::vector<double>> col_terms(static_cast<std::size_t>(l));
  std::vector<double> row_terms;
  auto column_update = [&](const Vector& fs, Vector& gs) {
    for (auto& c : col_terms) c.clear();
    for (Index i = 0; i < l; ++i) {
      for (Index k = 0; k < w; ++k) {
        if (cost.is_valid(i, k)) col_terms[cost.column(i, k)].push_back(fs[i] - cost.band(i, k) / mu);
      }
    }
    for (Index j = 0; j < l; ++j) gs[j] = -log_sum_exp(col_terms[j]);
  };
  for (int it = 1; it <= options.max_iter; ++it) {
    for (Index i = 0; i < l; ++i) {
      row_terms.clear();
      for (Index k = 0; k < w; ++k) {
        if (cost.is_valid(i, k)) row_terms.push_back(g[cost.column(i, k)] - cost.band(i, k) / mu);
      }
      f[i] = -log_sum_exp(row_terms);
    }
    column_update(f, g);

    result.iterations = it;
    const bool checkpoint = options.checkpoint_every > 0 && it % options.checkpoint_every == 0;
    AlignmentPlan plan = build_plan();
    result.violation = violation_of(plan);
    if (options.newton_acceleration && result.violation > options.tol) {
      // Same safeguarded step as newton_correction, applied to the potentials.
      const Matrix dense = plan.dense();
      const Vector rows = dense.rowwise().sum();
      Matrix hessian = -dense * dense.transpose();
      hessian.diagonal() += rows;
      hessian.array() += 1.0 / static_cast<double>(l);
      const Vector step = -hessian.ldlt().solve(rows - Vector::Ones(l));
      if (step.allFinite()) {
        const Vector f0 = f;
        const Vector g0 = g;
        const double d0 = f0.sum() + g0.sum();
        const double slope = (Vector::Ones(l) - rows).dot(step);
        bool accepted = false;
        for (double alpha = 1.0; alpha > 1e-6 && !accepted; alpha *= 0.5) {
          f = f0 + alpha * step;
          column_update(f, g);
          if (!g.allFinite() || f.sum() + g.sum() < d0 + 1e-4 * alpha * slope) continue;
          plan = build_plan();
          result.violation = violation_of(plan);
          accepted = true;
        }
        if (!accepted) {
          f = f0;
          g = g0;
        }
      }
    }
    if (checkpoint) result.checkpoints.push_back(result.violation);
    if (result.violation <= options.tol) {
      result.converged = true;
      result.plan = std::move(plan);
      return result;
    }
    if (it == options.max_iter) result.plan = std::move(plan);
  }
  return result;
}

}  // namespace

SinkhornResult sinkhorn(const BandedCost& cost, double mu, const SinkhornOptions& options) {
  if (!(mu > 0.0)) throw ConfigError("entropic weight mu must be > 0");
  if (!(options.tol > 0.0)) throw ConfigError("sinkhorn tolerance must be > 0");
  if (options.max_iter < 1) throw ConfigError("sinkhorn max_iter must be >= 1");
  if (cost.length < 1 || cost.band.rows() != cost.length || cost.band.cols() != cost.width() ||
      static_cast<Index>(cost.valid.size()) != cost.length * cost.width()) {
    throw DimensionError("malformed banded cost");
  }

  const Index l = cost.length;
  const Index w = cost.width();
  SinkhornState state;
  state.kernel = Matrix::Zero(l, w);
  for (Index i = 0; i < l; ++i) {
    for (Index k = 0; k < w; ++k) {
      if (cost.is_valid(i, k)) state.kernel(i, k) = std::exp(-cost.band(i, k) / mu);
    }
  }

  auto underflow = [&](const std::string& what) -> SinkhornResult {
    if (options.log_domain_retry) return sinkhorn_log_domain(cost, mu, options);
    throw ConditioningError(what);
  };

  {
    Vector row_mass = state.kernel.rowwise().sum();
    Vector col_mass(l);
    apply_kernel_transposed(cost, state.kernel, Vector::Ones(l), col_mass);
    for (Index i = 0; i < l; ++i) {
      if (row_mass[i] == 0.0) return underflow("kernel row " + std::to_string(i) + " underflows");
      if (col_mass[i] == 0.0) return underflow("kernel column " + std::to_string(i) + " underflows");
    }
  }

  state.u = Vector::Ones(l);
  state.v = Vector::Ones(l);
  Vector kv(l);
  Vector ktu(l);
  SinkhornResult result;
  for (int it = 1; it <= options.max_iter; ++it) {
    apply_kernel(cost, state.kernel, state.v, kv);
    state.u = kv.cwiseInverse();
    apply_kernel_transposed(cost, state.kernel, state.u, ktu);
    state.v = ktu.cwiseInverse();
    if (!state.u.allFinite() || !state.v.allFinite()) {
      return underflow("scaling vectors left the representable range");
    }

    AlignmentPlan plan = scaled_plan(cost, state);
    state.violation = violation_of(plan);
    if (options.newton_acceleration && state.violation > options.tol) {
      newton_correction(cost, state, plan);
    }
    state.iteration = it;

    if (options.checkpoint_every > 0 && it % options.checkpoint_every == 0) {
      result.checkpoints.push_back(state.violation);
    }
    if (state.violation <= options.tol || it == options.max_iter) {
      result.plan = std::move(plan);
      result.iterations = it;
      result.violation = state.violation;
      result.converged = state.violation <= options.tol;
      return result;
    }
  }
  return result;  // unreachable: max_iter >= 1
}

double transport_cost(const AlignmentPlan& plan, const BandedCost& cost) {
  if (plan.length != cost.length || plan.window != cost.window ||
      plan.band.rows() != cost.band.rows() || plan.band.cols() != cost.band.cols()) {
    throw DimensionError("plan and cost bands differ in shape");
  }
  double total = 0.0;
  for (Index i = 0; i < cost.length; ++i) {
    for (Index k = 0; k < cost.width(); ++k) {
      if (cost.is_valid(i, k)) total += plan.band(i, k) * cost.band(i, k);
    }
  }
  return total;
}

double marginal_violation(const AlignmentPlan& plan) { return violation_of(plan); }

void write_alignment_dump(std::ostream& os, const AlignmentPlan& plan) {
  os << plan.length << ' ' << plan.window << '\n';
  const Mask mask = band_mask(plan.length, plan.window);
  for (Index i = 0; i < plan.length; ++i) {
    for (Index k = 0; k < plan.width(); ++k) {
      if (k > 0) os << ' ';
      const double value = mask[i * plan.width() + k] ? plan.band(i, k) : 0.0;
      os << format_fixed(value, 9);
    }
    os << '\n';
  }
}

AlignmentPlan read_alignment_dump(std::istream& is) {
  std::string line;
  while (std::getline(is, line) && line.empty()) {
  }
  std::istringstream header(line);
  Index l = -1;
  Index window = -1;
  if (!(header >> l >> window) || l < 1 || window < 0) {
    throw DataError("alignment dump header must be 'l W'");
  }
  AlignmentPlan plan{l, window, Matrix::Zero(l, 2 * window + 1)};
  for (Index i = 0; i < l; ++i) {
    if (!std::getline(is, line)) throw DataError("alignment dump truncated at row " + std::to_string(i));
    std::istringstream row(line);
    std::string token;
    for (Index k = 0; k < plan.width(); ++k) {
      if (!(row >> token)) throw DataError("alignment dump row " + std::to_string(i) + " too short");
      try {
        plan.band(i, k) = parse_double(token);
      } catch (const std::invalid_argument&) {
        throw DataError("alignment dump row " + std::to_string(i) + ": bad value '" + token + "'");
      }
    }
  }
  return plan;
}

}  // namespace mmalign

namespace mmalign {

Vector band_heat(const std::vector<AlignmentPlan>& plans, Index min_length) {
  if (plans.empty()) throw DataError("band_heat needs at least one plan");
  const Index w = plans.front().window;
  Vector sum = Vector::Zero(2 * w + 1), count = Vector::Zero(2 * w + 1);
  for (const auto& p : plans) {
    if (p.window != w) throw DimensionError("band_heat over plans with different windows");
    if (p.length < min_length) continue;
    const Mask valid = band_mask(p.length, w);
    for (Index i = 0; i < p.length; ++i) {
      for (Index k = 0; k < p.width(); ++k) {
        if (!valid[i * p.width() + k]) continue;
        sum[k] += std::abs(p.band(i, k));
        count[k] += 1.0;
      }
    }
  }
  for (Index k = 0; k < sum.size(); ++k) sum[k] = count[k] > 0 ? sum[k] / count[k] : 0.0;
  return sum;
}

}  // namespace mmalign
