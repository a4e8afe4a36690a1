#pragma once

// Alignment dynamics learner.
//
// Learning mode: a GRU over the surviving modality's content representations
// followed by a linear projection predicts, for every timestep i, the band
// row of the transport plan (slots i-W .. i+W, masked softmax). Decoding
// mode: the predicted rows are assembled into a band plan, columns are
// renormalized, and the victim modality is imputed as the plan-weighted sum
// of surviving representations.

#include "mmalign/encoder.hpp"
#include "mmalign/numerics.hpp"
#include "mmalign/ot_align.hpp"

namespace mmalign {

struct WindowPredictions {
  Index length = 0;
  Index window = 0;
  Matrix rows;  // length x (2W+1); invalid slots exactly 0
  Mask valid;

  Index width() const { return 2 * window + 1; }
};

/// Single-layer GRU, gates ordered (reset, update, candidate).
class Gru {
 public:
  struct Cache {
    Matrix x;
    Matrix h_prev;  // l x H, hidden state entering each step
    Matrix r, z, n, gh_n;
    Matrix h;       // l x H outputs
  };

  Gru() = default;
  Gru(Index input, Index hidden, Rng& rng);

  Index hidden_dim() const { return wh.value.rows(); }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  /// Backpropagation through time; returns d/dx.
  Matrix backward(const Cache& cache, const Matrix& d_h);
  void collect(const std::string& prefix, ParamList& out);

  GradPair wx, wh, bx, bh;
};

class FitterParams {
 public:
  FitterParams() = default;
  FitterParams(Index d_model, Index hidden, Index window, Rng& rng);

  Index window() const { return window_; }
  void collect(const std::string& prefix, ParamList& out);

  Gru gru;
  Linear proj;

 private:
  Index window_ = 0;
};

struct FitCache {
  Gru::Cache gru;
  Matrix hidden;
  Matrix probs;
};

/// Predicts band rows from content representations (no head token).
WindowPredictions fit_predict(const Matrix& z1_content, const FitterParams& params,
                              FitCache* cache = nullptr);
/// Same, reading rows 1..l of an encoded sequence.
WindowPredictions fit_predict(const SharedRepr& z1, const FitterParams& params,
                              FitCache* cache = nullptr);

/// Accumulates parameter gradients from d/d(prediction rows); returns d/dz1 content.
Matrix fit_predict_backward(FitterParams& params, const FitCache& cache, const Matrix& d_rows);

enum class FitLossMode {
  kMse,           // mean squared error over valid band slots
  kPaperLiteral,  // sqrt(sum of squares) / ((2W+1) l)
};

double fitting_loss(const WindowPredictions& pred, const AlignmentPlan& target, FitLossMode mode,
                    Matrix* d_rows = nullptr);

/// Band plan whose row i is prediction row i. With renormalize_columns every
/// column is rescaled to unit mass; a column without mass is an error.
AlignmentPlan reconstruct_plan(const WindowPredictions& pred, bool renormalize_columns = true);

/// zhat2_j = sum_i plan(i, j) z1_i on content rows; row 0 becomes cls_embedding.
SharedRepr impute(const AlignmentPlan& plan, const SharedRepr& z1, const Matrix& cls_embedding);

/// Gradient of impute w.r.t. z1 (row 0 is zero); the plan is held fixed.
Matrix impute_backward(const AlignmentPlan& plan, const Matrix& d_zhat2);

/// Per-row argmax offset (slot - W) of a band matrix, valid slots only.
std::vector<Index> row_argmax_offsets(const Matrix& band, Index window);

}  // namespace mmalign
