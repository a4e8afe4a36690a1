#include "mmalign/adl.hpp"

#include <cmath>

namespace mmalign {

Gru::Gru(Index input, Index hidden, Rng& rng)
    : wx(xavier_uniform(input, 3 * hidden, rng)),
      wh(xavier_uniform(hidden, 3 * hidden, rng)),
      bx(Matrix::Zero(1, 3 * hidden)),
      bh(Matrix::Zero(1, 3 * hidden)) {}

Matrix Gru::forward(const Matrix& x, Cache* cache) const {
  const Index l = x.rows();
  const Index hd = hidden_dim();
  if (x.cols() != wx.value.rows()) {
    throw DimensionError("GRU expects width " + std::to_string(wx.value.rows()));
  }
  Matrix gx = x * wx.value;
  gx.rowwise() += bx.value.row(0);

  Matrix h_prev(l, hd), r(l, hd), z(l, hd), n(l, hd), gh_n(l, hd), out(l, hd);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(hd);
  for (Index t = 0; t < l; ++t) {
    Eigen::RowVectorXd gh = h * wh.value + bh.value.row(0);
    h_prev.row(t) = h;
    for (Index c = 0; c < hd; ++c) {
      r(t, c) = sigmoid(gx(t, c) + gh[c]);
      z(t, c) = sigmoid(gx(t, hd + c) + gh[hd + c]);
      gh_n(t, c) = gh[2 * hd + c];
      n(t, c) = std::tanh(gx(t, 2 * hd + c) + r(t, c) * gh_n(t, c));
      h[c] = (1.0 - z(t, c)) * n(t, c) + z(t, c) * h[c];
    }
    out.row(t) = h;
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = std::move(h_prev);
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->gh_n = std::move(gh_n);
    cache->h = out;
  }
  return out;
}

Matrix Gru::backward(const Cache& cache, const Matrix& d_h) {
  const Index l = cache.x.rows();
  const Index hd = hidden_dim();
  Matrix dgx(l, 3 * hd);
  Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(hd);
  Eigen::RowVectorXd dgh(3 * hd);
  for (Index t = l; t-- > 0;) {
    const Eigen::RowVectorXd dh = d_h.row(t) + carry;
    Eigen::RowVectorXd dh_prev(hd);
    for (Index c = 0; c < hd; ++c) {
      const double r = cache.r(t, c);
      const double z = cache.z(t, c);
      const double n = cache.n(t, c);
      const double dn_pre = dh[c] * (1.0 - z) * (1.0 - n * n);
      const double dz_pre = dh[c] * (cache.h_prev(t, c) - n) * z * (1.0 - z);
      const double dr_pre = dn_pre * cache.gh_n(t, c) * r * (1.0 - r);
      dgx(t, c) = dr_pre;
      dgx(t, hd + c) = dz_pre;
      dgx(t, 2 * hd + c) = dn_pre;
      dgh[c] = dr_pre;
      dgh[hd + c] = dz_pre;
      dgh[2 * hd + c] = dn_pre * r;
      dh_prev[c] = dh[c] * z;
    }
    wh.grad.noalias() += cache.h_prev.row(t).transpose() * dgh;
    bh.grad.row(0) += dgh;
    carry = dh_prev + dgh * wh.value.transpose();
  }
  wx.grad.noalias() += cache.x.transpose() * dgx;
  bx.grad.row(0) += dgx.colwise().sum();
  return dgx * wx.value.transpose();
}

void Gru::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "/wx", &wx});
  out.push_back({prefix + "/wh", &wh});
  out.push_back({prefix + "/bx", &bx});
  out.push_back({prefix + "/bh", &bh});
}

FitterParams::FitterParams(Index d_model, Index hidden, Index window, Rng& rng)
    : gru(d_model, hidden, rng), proj(hidden, 2 * window + 1, rng), window_(window) {
  if (window < 0) throw ConfigError("window must be >= 0");
}

void FitterParams::collect(const std::string& prefix, ParamList& out) {
  gru.collect(prefix + "/gru", out);
  proj.collect(prefix + "/proj", out);
}

WindowPredictions fit_predict(const Matrix& z1_content, const FitterParams& params,
                              FitCache* cache) {
  const Index l = z1_content.rows();
  if (l == 0) throw DataError("fit_predict on an empty sequence");
  const Index window = params.window();

  Gru::Cache gru_cache;
  Matrix hidden = params.gru.forward(z1_content, cache != nullptr ? &cache->gru : &gru_cache);
  const Matrix logits = params.proj.forward(hidden);

  WindowPredictions pred;
  pred.length = l;
  pred.window = window;
  pred.valid = band_mask(l, window);
  pred.rows = Matrix::Zero(l, pred.width());
  for (Index i = 0; i < l; ++i) {
    const std::span<const std::uint8_t> row_mask(pred.valid.data() + i * pred.width(),
                                                 static_cast<std::size_t>(pred.width()));
    pred.rows.row(i) = softmax_row(logits.row(i).transpose(), row_mask).transpose();
  }
  if (cache != nullptr) {
    cache->hidden = std::move(hidden);
    cache->probs = pred.rows;
  }
  return pred;
}

WindowPredictions fit_predict(const SharedRepr& z1, const FitterParams& params, FitCache* cache) {
  if (z1.values.rows() < 2) throw DataError("fit_predict on an empty sequence");
  return fit_predict(z1.content(), params, cache);
}

Matrix fit_predict_backward(FitterParams& params, const FitCache& cache, const Matrix& d_rows) {
  Matrix d_logits(d_rows.rows(), d_rows.cols());
  for (Index i = 0; i < d_rows.rows(); ++i) {
    d_logits.row(i) =
        softmax_row_backward(cache.probs.row(i).transpose(), d_rows.row(i).transpose()).transpose();
  }
  const Matrix d_hidden = params.proj.backward(cache.hidden, d_logits);
  return params.gru.backward(cache.gru, d_hidden);
}

double fitting_loss(const WindowPredictions& pred, const AlignmentPlan& target, FitLossMode mode,
                    Matrix* d_rows) {
  if (pred.length != target.length || pred.window != target.window ||
      pred.rows.rows() != target.band.rows() || pred.rows.cols() != target.band.cols()) {
    throw DimensionError("prediction and target bands differ in shape");
  }
  Matrix diff = Matrix::Zero(pred.length, pred.width());
  Index count = 0;
  for (Index i = 0; i < pred.length; ++i) {
    for (Index k = 0; k < pred.width(); ++k) {
      if (pred.valid[i * pred.width() + k]) {
        diff(i, k) = pred.rows(i, k) - target.band(i, k);
        ++count;
      }
    }
  }
  const double sum_sq = diff.squaredNorm();
  if (mode == FitLossMode::kMse) {
    if (d_rows != nullptr) *d_rows = diff * (2.0 / static_cast<double>(count));
    return sum_sq / static_cast<double>(count);
  }
  const double scale = 1.0 / static_cast<double>(pred.width() * pred.length);
  const double root = std::sqrt(sum_sq);
  if (d_rows != nullptr) {
    *d_rows = root > 0.0 ? Matrix(diff * (scale / root)) : Matrix(Matrix::Zero(diff.rows(), diff.cols()));
  }
  return scale * root;
}

AlignmentPlan reconstruct_plan(const WindowPredictions& pred, bool renormalize_columns) {
  AlignmentPlan plan{pred.length, pred.window, pred.rows};
  for (Index i = 0; i < pred.length; ++i) {
    for (Index k = 0; k < pred.width(); ++k) {
      if (!pred.valid[i * pred.width() + k]) plan.band(i, k) = 0.0;
    }
  }
  if (!renormalize_columns) return plan;

  const Vector cols = plan.col_sums();
  for (Index j = 0; j < pred.length; ++j) {
    if (!(cols[j] > 0.0)) throw DegenerateError("column " + std::to_string(j) + " carries no mass");
  }
  for (Index i = 0; i < pred.length; ++i) {
    for (Index k = 0; k < pred.width(); ++k) {
      const Index j = i - pred.window + k;
      if (j >= 0 && j < pred.length) plan.band(i, k) /= cols[j];
    }
  }
  return plan;
}

SharedRepr impute(const AlignmentPlan& plan, const SharedRepr& z1, const Matrix& cls_embedding) {
  const Index l = z1.content_length();
  if (plan.length != l) {
    throw DimensionError("plan length " + std::to_string(plan.length) + " vs sequence length " +
                         std::to_string(l));
  }
  if (cls_embedding.rows() != 1 || cls_embedding.cols() != z1.dim()) {
    throw DimensionError("head-token embedding width mismatch");
  }
  SharedRepr out{Matrix::Zero(l + 1, z1.dim())};
  out.values.row(0) = cls_embedding.row(0);
  for (Index i = 0; i < l; ++i) {
    for (Index k = 0; k < plan.width(); ++k) {
      const Index j = i - plan.window + k;
      if (j >= 0 && j < l && plan.band(i, k) != 0.0) {
        out.values.row(j + 1) += plan.band(i, k) * z1.values.row(i + 1);
      }
    }
  }
  return out;
}

Matrix impute_backward(const AlignmentPlan& plan, const Matrix& d_zhat2) {
  const Index l = plan.length;
  Matrix d_z1 = Matrix::Zero(l + 1, d_zhat2.cols());
  for (Index i = 0; i < l; ++i) {
    for (Index k = 0; k < plan.width(); ++k) {
      const Index j = i - plan.window + k;
      if (j >= 0 && j < l && plan.band(i, k) != 0.0) {
        d_z1.row(i + 1) += plan.band(i, k) * d_zhat2.row(j + 1);
      }
    }
  }
  return d_z1;
}

std::vector<Index> row_argmax_offsets(const Matrix& band, Index window) {
  const Index l = band.rows();
  const Mask mask = band_mask(l, window);
  std::vector<Index> out(static_cast<std::size_t>(l), 0);
  for (Index i = 0; i < l; ++i) {
    Index best = -1;
    for (Index k = 0; k < band.cols(); ++k) {
      if (!mask[i * band.cols() + k]) continue;
      if (best < 0 || band(i, k) > band(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = best - window;
  }
  return out;
}

}  // namespace mmalign
