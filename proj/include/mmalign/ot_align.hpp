#pragma once

// Windowed entropic optimal transport between two equal-length sequences.
//
// Everything is stored in band layout: slot (i, k) of an l x (2W+1) band maps
// to dense entry (i, i - W + k). Slots whose column falls outside [0, l) are
// flagged invalid. Entries outside the band are never stored, which is how the
// barrier (infinite) cost is represented: its kernel value exp(-inf) is an
// exact structural zero.

#include <iosfwd>
#include <vector>

#include "mmalign/numerics.hpp"

namespace mmalign {

/// Validity flags of an l x (2W+1) band, row-major.
Mask band_mask(Index length, Index window);

/// Number of valid band slots: sum over rows of min(i+W, l-1) - max(i-W, 0) + 1.
Index valid_slot_count(Index length, Index window);

struct BandedCost {
  Index length = 0;
  Index window = 0;
  Matrix band;  // length x (2W+1); invalid slots hold 0 and are ignored
  Mask valid;

  Index width() const { return 2 * window + 1; }
  bool is_valid(Index i, Index k) const { return valid[i * width() + k] != 0; }
  Index column(Index i, Index k) const { return i - window + k; }
};

struct AlignmentPlan {
  Index length = 0;
  Index window = 0;
  Matrix band;  // nonnegative; invalid slots exactly 0

  Index width() const { return 2 * window + 1; }
  Vector row_sums() const;
  Vector col_sums() const;
  /// Dense l x l reconstruction with exact zeros outside the band.
  Matrix dense() const;
};

/// Scaling vectors and kernel of a band Sinkhorn run.
struct SinkhornState {
  Vector u;
  Vector v;
  Matrix kernel;  // exp(-M / mu) in band layout, 0 on invalid slots
  int iteration = 0;
  double violation = 0.0;
};

struct SinkhornOptions {
  double tol = 1e-6;
  int max_iter = 500;
  // Retry with log-domain updates when the kernel underflows instead of
  // raising ConditioningError.
  bool log_domain_retry = false;
  // After each scaling sweep, try a Newton step on the row potentials of the
  // semi-dual, backtracking until the dual objective rises enough. The fixed
  // point is unchanged; narrow bands on long sequences converge in tens of
  // iterations instead of thousands.
  bool newton_acceleration = true;
  int checkpoint_every = 10;
};

struct SinkhornResult {
  AlignmentPlan plan;
  int iterations = 0;
  double violation = 0.0;  // L-infinity marginal violation of `plan`
  bool converged = false;
  bool log_domain = false;
  std::vector<double> checkpoints;  // violation every checkpoint_every iterations
};

/// Band of 1 - cos(z1_i, z2_j) for |i - j| <= window. Rows of z1 and z2 are the
/// content timesteps (no head token).
BandedCost build_cost(const Matrix& z1, const Matrix& z2, Index window);

/// Entropic OT with unit row and column marginals (total mass l).
SinkhornResult sinkhorn(const BandedCost& cost, double mu, const SinkhornOptions& options = {});

double transport_cost(const AlignmentPlan& plan, const BandedCost& cost);

/// max(|row sums - 1|, |col sums - 1|).
double marginal_violation(const AlignmentPlan& plan);

/// Text dump: a "l W" header line, then l lines of 2W+1 fixed-point values.
void write_alignment_dump(std::ostream& os, const AlignmentPlan& plan);
AlignmentPlan read_alignment_dump(std::istream& is);

/// Mean |entry| per band slot, over plans of length >= min_length and only
/// where the slot is valid. All plans must share one window. Slots never valid
/// in any counted plan report 0.
Vector band_heat(const std::vector<AlignmentPlan>& plans, Index min_length = 0);

}  // namespace mmalign
