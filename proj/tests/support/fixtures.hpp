#pragma once

// Random instances shared by the unit and acceptance tests.

#include "mmalign/data.hpp"
#include "mmalign/model.hpp"
#include "mmalign/numerics.hpp"
#include "mmalign/ot_align.hpp"

namespace fixture {

using mmalign::Index;
using mmalign::Matrix;
using mmalign::Rng;

inline Matrix gaussian(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * mmalign::standard_normal(rng);
  return m;
}

/// Cosine cost between two random sequences.
inline mmalign::BandedCost random_cost(Index l, Index window, Rng& rng, Index dim = 8) {
  return mmalign::build_cost(gaussian(l, dim, rng), gaussian(l, dim, rng), window);
}

inline mmalign::Index uniform_index(Rng& rng, Index lo, Index hi) {  // inclusive
  return lo + static_cast<Index>(mmalign::uniform01(rng) * static_cast<double>(hi - lo + 1));
}

inline mmalign::ModelConfig tiny_model(Index d_in = 4, Index window = 2) {
  mmalign::ModelConfig c;
  c.d_in1 = d_in;
  c.d_in2 = d_in;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 12;
  c.encoder_layers = 1;
  c.fusion_layers = 1;
  c.head_hidden = 6;
  c.max_len = 16;
  c.window = window;
  return c;
}

inline mmalign::ModalitySequence sequence(mmalign::Modality tag, Index l, Index d, Rng& rng) {
  return {tag, gaussian(l, d, rng)};
}

}  // namespace fixture
