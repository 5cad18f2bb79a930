/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evlink/common.hpp"
#include "evlink/rng.hpp"

// Sequence kernel used by the model: 1-D convolution, batch norm, max
// pooling, dense layers, LSTM/BiLSTM and dropout, each with an exact
// reverse-mode backward. All sequence tensors are stored t-major: a
// (T*B) x C matrix whose row t*B + b is time step t of batch element b,
// so one time step occupies a contiguous row block.
//
// Backward functions accumulate (+=) into their gradient outputs; callers
// zero them once per batch. Forward caches hold everything backward needs.

namespace evlink::nn {

using Index = Eigen::Index;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using CRef = Eigen::Ref<const Mat<S>>;

enum class Mode { train, infer };

/// Grow-only matrix buffer. Lets a long-lived workspace serve varying
/// (B, T) without reallocating once warmed to the largest size. Storage is
/// Eigen-aligned: kernel peeling must not depend on where the heap put us,
/// or bitwise reproducibility across runs is lost.
template <typename S>
class GrowMat {
 public:
  void ensure(Index rows, Index cols) {
    const auto need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (need > buf_.size()) buf_.resize(need);
    rows_ = rows;
    cols_ = cols;
  }
  Eigen::Map<Mat<S>> view() { return {buf_.data(), rows_, cols_}; }
  Eigen::Map<const Mat<S>> view() const { return {buf_.data(), rows_, cols_}; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

 private:
  std::vector<S, Eigen::aligned_allocator<S>> buf_;
  Index rows_ = 0;
  Index cols_ = 0;
};

// ---------------------------------------------------------------------------
// Activations

template <typename S>
void relu_forward(const CRef<S>& x, Eigen::Ref<Mat<S>> y) {
  y = x.cwiseMax(S(0));
}

/// Subgradient at 0 is 0: gradient flows only where the input was > 0.
template <typename S>
void relu_backward(const CRef<S>& x, const CRef<S>& dy, Eigen::Ref<Mat<S>> dx) {
  dx = ((x.array() > S(0)).template cast<S>() * dy.array()).matrix();
}

// ---------------------------------------------------------------------------
// Dense (time-distributed when applied to a (T*B) x C block)

template <typename S>
struct Dense {
  Mat<S> w;  // out x in
  Vec<S> b;  // out

  void setZero(Index out, Index in) {
    w = Mat<S>::Zero(out, in);
    b = Vec<S>::Zero(out);
  }
};

template <typename S>
void dense_forward(const CRef<S>& x, const Dense<S>& p, Eigen::Ref<Mat<S>> y) {
  y.noalias() = x * p.w.transpose();
  y.rowwise() += p.b.transpose();
}

template <typename S>
void dense_backward(const CRef<S>& x, const CRef<S>& dy, const Dense<S>& p, Dense<S>& grad,
                    Eigen::Ref<Mat<S>> dx, bool want_dx = true) {
  grad.w.noalias() += dy.transpose() * x;
  grad.b.noalias() += dy.colwise().sum().transpose();
  if (want_dx) dx.noalias() = dy * p.w;
}

// ---------------------------------------------------------------------------
// 1-D convolution, kernel width 3, stride 1, same (zero) padding.
// Taps never cross trip boundaries; positions outside [0, T) contribute 0.
// No bias: every use in the model is followed by batch norm or acts as a
// linear residual projection.

template <typename S>
struct Conv1d {
  Mat<S> w_prev;  // C_in x C_out, applied to x_{t-1}
  Mat<S> w_self;  // C_in x C_out, applied to x_t
  Mat<S> w_next;  // C_in x C_out, applied to x_{t+1}

  void setZero(Index in, Index out) {
    w_prev = Mat<S>::Zero(in, out);
    w_self = Mat<S>::Zero(in, out);
    w_next = Mat<S>::Zero(in, out);
  }
};

template <typename S>
void conv1d_forward(const CRef<S>& x, Index B, Index T, const Conv1d<S>& p,
                    Eigen::Ref<Mat<S>> y) {
  if (x.rows() != B * T || x.cols() != p.w_self.rows()) {
    throw std::invalid_argument("conv1d: input shape mismatch");
  }
  y.noalias() = x * p.w_self;
  if (T > 1) {
    const Index n = (T - 1) * B;
    y.bottomRows(n).noalias() += x.topRows(n) * p.w_prev;
    y.topRows(n).noalias() += x.bottomRows(n) * p.w_next;
  }
}

template <typename S>
void conv1d_backward(const CRef<S>& x, const CRef<S>& dy, Index B, Index T, const Conv1d<S>& p,
                     Conv1d<S>& grad, Eigen::Ref<Mat<S>> dx, bool want_dx = true) {
  grad.w_self.noalias() += x.transpose() * dy;
  if (want_dx) dx.noalias() = dy * p.w_self.transpose();
  if (T > 1) {
    const Index n = (T - 1) * B;
    grad.w_prev.noalias() += x.topRows(n).transpose() * dy.bottomRows(n);
    grad.w_next.noalias() += x.bottomRows(n).transpose() * dy.topRows(n);
    if (want_dx) {
      dx.topRows(n).noalias() += dy.bottomRows(n) * p.w_prev.transpose();
      dx.bottomRows(n).noalias() += dy.topRows(n) * p.w_next.transpose();
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization over rows, per channel. Train mode uses biased batch
// statistics and updates running moments; infer mode uses the stored ones.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename S>
struct BatchNorm {
  Vec<S> gamma;
  Vec<S> beta;
  Vec<S> running_mean;  // state, not learnable
  Vec<S> running_var;   // state, not learnable

  void setZero(Index channels) {
    gamma = Vec<S>::Zero(channels);
    beta = Vec<S>::Zero(channels);
    running_mean = Vec<S>::Zero(channels);
    running_var = Vec<S>::Zero(channels);
  }
};

template <typename S>
struct BatchNormCache {
  Vec<S> inv_std;      // 1/sqrt(var + eps)
  Vec<S> mean;
  GrowMat<S> xhat;     // normalized input, train mode only
};

/// In train mode batch statistics drive the normalization; running moments
/// are folded into *moment_update when given (usually the same BatchNorm).
template <typename S>
void batch_norm_forward(const CRef<S>& x, const BatchNorm<S>& p, Mode mode, Eigen::Ref<Mat<S>> y,
                        BatchNormCache<S>& cache, BatchNorm<S>* moment_update = nullptr) {
  const Index n = x.rows();
  const Index c = x.cols();
  if (mode == Mode::train) {
    if (n < 2) throw std::invalid_argument("batch_norm: train mode needs at least 2 rows");
    cache.mean = x.colwise().mean().transpose();
    Vec<S> var(c);
    for (Index j = 0; j < c; ++j) {
      var(j) = (x.col(j).array() - cache.mean(j)).square().sum() / static_cast<S>(n);
    }
    cache.inv_std = (var.array() + S(kBatchNormEps)).rsqrt().matrix();
    cache.xhat.ensure(n, c);
    auto xhat = cache.xhat.view();
    for (Index j = 0; j < c; ++j) {
      xhat.col(j) = ((x.col(j).array() - cache.mean(j)) * cache.inv_std(j)).matrix();
      y.col(j) = (xhat.col(j).array() * p.gamma(j) + p.beta(j)).matrix();
    }
    if (moment_update) {
      moment_update->running_mean = S(kBatchNormMomentum) * moment_update->running_mean +
                                    S(1 - kBatchNormMomentum) * cache.mean;
      moment_update->running_var = (S(kBatchNormMomentum) * moment_update->running_var.array() +
                                    S(1 - kBatchNormMomentum) * var.array())
                                       .matrix();
    }
  } else {
    for (Index j = 0; j < c; ++j) {
      const S inv = S(1) / std::sqrt(p.running_var(j) + S(kBatchNormEps));
      y.col(j) = ((x.col(j).array() - p.running_mean(j)) * inv * p.gamma(j) + p.beta(j)).matrix();
    }
  }
}

/// Train-mode backward; the batch statistics' dependence on x is included.
template <typename S>
void batch_norm_backward(const CRef<S>& dy, const BatchNorm<S>& p, const BatchNormCache<S>& cache,
                         BatchNorm<S>& grad, Eigen::Ref<Mat<S>> dx) {
  const Index n = dy.rows();
  const Index c = dy.cols();
  auto xhat = cache.xhat.view();
  for (Index j = 0; j < c; ++j) {
    const S dgamma = (dy.col(j).array() * xhat.col(j).array()).sum();
    const S dbeta = dy.col(j).sum();
    grad.gamma(j) += dgamma;
    grad.beta(j) += dbeta;
    // dx = (gamma*inv_std/n) * (n*dy - sum(dy) - xhat*sum(dy*xhat))
    dx.col(j) = ((p.gamma(j) * cache.inv_std(j) / static_cast<S>(n)) *
                 (static_cast<S>(n) * dy.col(j).array() - dbeta - xhat.col(j).array() * dgamma))
                    .matrix();
  }
}

/// Backward through infer-mode batch norm (a fixed affine map using the
/// running moments). Used for degenerate single-row batches, where train
/// mode is rejected.
template <typename S>
void batch_norm_infer_backward(const CRef<S>& x, const CRef<S>& dy, const BatchNorm<S>& p,
                               BatchNorm<S>& grad, Eigen::Ref<Mat<S>> dx) {
  for (Index j = 0; j < dy.cols(); ++j) {
    const S inv = S(1) / std::sqrt(p.running_var(j) + S(kBatchNormEps));
    grad.gamma(j) += (dy.col(j).array() * (x.col(j).array() - p.running_mean(j)) * inv).sum();
    grad.beta(j) += dy.col(j).sum();
    dx.col(j) = (dy.col(j).array() * p.gamma(j) * inv).matrix();
  }
}

// ---------------------------------------------------------------------------
// Max pooling, window 3, stride 1, same padding: sequence length preserved.
// Ties resolve to the earliest time step so backward routing is unique.

template <typename S>
void maxpool3_forward(const CRef<S>& x, Index B, Index T, Eigen::Ref<Mat<S>> y,
                      GrowMat<std::int32_t>& argmax) {
  const Index c = x.cols();
  argmax.ensure(B * T, c);
  auto arg = argmax.view();
  for (Index j = 0; j < c; ++j) {
    for (Index t = 0; t < T; ++t) {
      const Index lo = t > 0 ? t - 1 : 0;
      const Index hi = t + 1 < T ? t + 1 : T - 1;
      for (Index b = 0; b < B; ++b) {
        Index best = lo * B + b;
        S best_v = x(best, j);
        for (Index k = lo + 1; k <= hi; ++k) {
          const S v = x(k * B + b, j);
          if (v > best_v) {
            best_v = v;
            best = k * B + b;
          }
        }
        y(t * B + b, j) = best_v;
        arg(t * B + b, j) = static_cast<std::int32_t>(best);
      }
    }
  }
}

template <typename S>
void maxpool3_backward(const CRef<S>& dy, const GrowMat<std::int32_t>& argmax,
                       Eigen::Ref<Mat<S>> dx) {
  auto arg = argmax.view();
  dx.setZero();
  for (Index j = 0; j < dy.cols(); ++j) {
    for (Index i = 0; i < dy.rows(); ++i) {
      dx(arg(i, j), j) += dy(i, j);
    }
  }
}

// ---------------------------------------------------------------------------
// Dropout. Train mode zeroes units with probability `rate` and scales
// survivors by 1/(1-rate); infer mode is the identity.

template <typename S>
void dropout_forward(const CRef<S>& x, double rate, Mode mode, Rng& rng, Eigen::Ref<Mat<S>> y,
                     GrowMat<S>& mask) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) {
    mask.ensure(0, 0);
    y = x;
    return;
  }
  const S scale = S(1.0 / (1.0 - rate));
  mask.ensure(x.rows(), x.cols());
  auto m = mask.view();
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      m(i, j) = rng.uniform() < rate ? S(0) : scale;
    }
  }
  y = x.cwiseProduct(m);
}

template <typename S>
void dropout_backward(const CRef<S>& dy, const GrowMat<S>& mask, Eigen::Ref<Mat<S>> dx) {
  if (mask.rows() == 0) {
    dx = dy;
    return;
  }
  dx = dy.cwiseProduct(mask.view());
}

// ---------------------------------------------------------------------------
// LSTM. Gate order along the 4H axis: input, forget, cell candidate,
// output. Sigmoid gates, tanh cell activation.

template <typename S>
struct Lstm {
  Mat<S> w;  // 4H x D_in
  Mat<S> r;  // 4H x H
  Vec<S> b;  // 4H

  Index hidden() const { return r.cols(); }
  Index input() const { return w.cols(); }

  void setZero(Index h, Index in) {
    w = Mat<S>::Zero(4 * h, in);
    r = Mat<S>::Zero(4 * h, h);
    b = Vec<S>::Zero(4 * h);
  }
};

/// Internal sequence caches are channel-major (columns t*B+b), so every
/// per-step product and activation runs on contiguous memory; only the
/// hidden-state output keeps the shared t-major row layout.
template <typename S>
struct LstmCache {
  GrowMat<S> gates;   // 4H x (T*B), post-activation
  GrowMat<S> c;       // H x (T*B) cell states
  GrowMat<S> tanh_c;  // H x (T*B)
  GrowMat<S> h;       // (T*B) x H hidden states (the layer output)
  Mat<S> h_cur, c_cur;  // H x B step buffers
  Mat<S> h0, c0;      // B x H initial states as given

  Eigen::Map<const Mat<S>> outputs() const { return h.view(); }
};

template <typename S>
void lstm_forward(const CRef<S>& x, Index B, Index T, const Lstm<S>& p, const Mat<S>& h0,
                  const Mat<S>& c0, LstmCache<S>& cache) {
  const Index H = p.hidden();
  if (h0.rows() != B || h0.cols() != H || c0.rows() != B || c0.cols() != H) {
    throw std::invalid_argument("lstm: initial state shape mismatch");
  }
  if (x.rows() != T * B || x.cols() != p.input()) {
    throw std::invalid_argument("lstm: input shape mismatch");
  }
  cache.gates.ensure(4 * H, T * B);
  cache.c.ensure(H, T * B);
  cache.tanh_c.ensure(H, T * B);
  cache.h.ensure(T * B, H);
  cache.h0 = h0;
  cache.c0 = c0;

  auto gates = cache.gates.view();
  auto cs = cache.c.view();
  auto tc = cache.tanh_c.view();
  auto hs = cache.h.view();

  // Input-side transform for the whole sequence in one pass.
  gates.noalias() = p.w * x.transpose();
  gates.colwise() += p.b;

  cache.h_cur = h0.transpose();
  cache.c_cur = c0.transpose();
  for (Index t = 0; t < T; ++t) {
    auto g = gates.middleCols(t * B, B);  // 4H x B, contiguous
    g.noalias() += p.r * cache.h_cur;
    auto gi = g.topRows(H);
    auto gf = g.middleRows(H, H);
    auto gg = g.middleRows(2 * H, H);
    auto go = g.bottomRows(H);
    gi = ((S(1) + (-gi.array()).exp()).inverse()).matrix();
    gf = ((S(1) + (-gf.array()).exp()).inverse()).matrix();
    gg = (gg.array().tanh()).matrix();
    go = ((S(1) + (-go.array()).exp()).inverse()).matrix();

    auto ct = cs.middleCols(t * B, B);
    ct = gf.cwiseProduct(cache.c_cur) + gi.cwiseProduct(gg);
    cache.c_cur = ct;
    auto tct = tc.middleCols(t * B, B);
    tct = (ct.array().tanh()).matrix();
    cache.h_cur = go.cwiseProduct(tct);
    if (!cache.h_cur.allFinite()) {
      throw DivergenceError("lstm: non-finite hidden state at step " + std::to_string(t));
    }
    hs.middleRows(t * B, B) = cache.h_cur.transpose();
  }
}

/// dh_seq may be null when only final-state gradients flow in (and vice
/// versa). dx must be sized (T*B) x D_in; gradients accumulate.
template <typename S>
void lstm_backward(const CRef<S>& x, Index B, Index T, const Lstm<S>& p,
                   const LstmCache<S>& cache, const Mat<S>* dh_seq, const Mat<S>* dh_final,
                   const Mat<S>* dc_final, Lstm<S>& grad, Eigen::Ref<Mat<S>> dx, Mat<S>& dh0,
                   Mat<S>& dc0) {
  const Index H = p.hidden();
  auto gates = cache.gates.view();
  auto cs = cache.c.view();
  auto tc = cache.tanh_c.view();
  auto hs = cache.h.view();

  Mat<S> dh = Mat<S>::Zero(H, B);  // carried dL/dh_t
  Mat<S> dc = Mat<S>::Zero(H, B);  // carried dL/dc_t
  if (dh_final) dh = dh_final->transpose();
  if (dc_final) dc = dc_final->transpose();
  Mat<S> dg(4 * H, B);

  for (Index t = T - 1; t >= 0; --t) {
    if (dh_seq) dh += dh_seq->middleRows(t * B, B).transpose();
    auto g = gates.middleCols(t * B, B);
    auto i = g.topRows(H);
    auto f = g.middleRows(H, H);
    auto gg = g.middleRows(2 * H, H);
    auto o = g.bottomRows(H);
    auto tct = tc.middleCols(t * B, B);

    // dL/do, dL/dc
    Mat<S> do_ = dh.cwiseProduct(tct);
    dc.array() += dh.array() * o.array() * (S(1) - tct.array().square());

    const Mat<S> c_prev = t == 0 ? Mat<S>(cache.c0.transpose())
                                 : Mat<S>(cs.middleCols((t - 1) * B, B));
    Mat<S> di = dc.cwiseProduct(gg);
    Mat<S> dgg = dc.cwiseProduct(i);
    Mat<S> df = dc.cwiseProduct(c_prev);
    Mat<S> dc_prev = dc.cwiseProduct(f);

    dg.topRows(H) = (di.array() * i.array() * (S(1) - i.array())).matrix();
    dg.middleRows(H, H) = (df.array() * f.array() * (S(1) - f.array())).matrix();
    dg.middleRows(2 * H, H) = (dgg.array() * (S(1) - gg.array().square())).matrix();
    dg.bottomRows(H) = (do_.array() * o.array() * (S(1) - o.array())).matrix();

    grad.w.noalias() += dg * x.middleRows(t * B, B);
    grad.b.noalias() += dg.rowwise().sum();
    dx.middleRows(t * B, B).noalias() = dg.transpose() * p.w;
    if (t == 0) {
      grad.r.noalias() += dg * cache.h0;
      dh0 = (p.r.transpose() * dg).transpose();
      dc0 = dc_prev.transpose();
    } else {
      grad.r.noalias() += dg * hs.middleRows((t - 1) * B, B);
      dh.noalias() = p.r.transpose() * dg;
      dc = dc_prev;
    }
  }
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM: forward direction reads the sequence as-is, backward
// direction reads it time-reversed; outputs are concatenated per step.

template <typename S>
struct BiLstm {
  Lstm<S> fwd;
  Lstm<S> bwd;
};

template <typename S>
struct BiLstmCache {
  LstmCache<S> fwd;
  LstmCache<S> bwd;      // computed over the reversed sequence
  GrowMat<S> x_rev;      // reversed input
  GrowMat<S> out;        // (T*B) x 2H concatenated outputs
};

template <typename S>
void reverse_time(const CRef<S>& x, Index B, Index T, Eigen::Ref<Mat<S>> y) {
  for (Index t = 0; t < T; ++t) {
    y.middleRows(t * B, B) = x.middleRows((T - 1 - t) * B, B);
  }
}

template <typename S>
void bilstm_forward(const CRef<S>& x, Index B, Index T, const BiLstm<S>& p, const Mat<S>& h0_fwd,
                    const Mat<S>& c0_fwd, const Mat<S>& h0_bwd, const Mat<S>& c0_bwd,
                    BiLstmCache<S>& cache) {
  const Index H = p.fwd.hidden();
  cache.x_rev.ensure(T * B, x.cols());
  reverse_time<S>(x, B, T, cache.x_rev.view());
  lstm_forward<S>(x, B, T, p.fwd, h0_fwd, c0_fwd, cache.fwd);
  lstm_forward<S>(cache.x_rev.view(), B, T, p.bwd, h0_bwd, c0_bwd, cache.bwd);
  cache.out.ensure(T * B, 2 * H);
  auto out = cache.out.view();
  out.leftCols(H) = cache.fwd.h.view();
  // Row t of the output carries the backward state computed at reversed
  // position T-1-t.
  reverse_time<S>(cache.bwd.h.view(), B, T, out.rightCols(H));
}

template <typename S>
void bilstm_backward(const CRef<S>& x, Index B, Index T, const BiLstm<S>& p,
                     const BiLstmCache<S>& cache, const Mat<S>& dout, BiLstm<S>& grad,
                     Eigen::Ref<Mat<S>> dx, Mat<S>& dh0_fwd, Mat<S>& dc0_fwd, Mat<S>& dh0_bwd,
                     Mat<S>& dc0_bwd) {
  const Index H = p.fwd.hidden();
  Mat<S> dh_fwd = dout.leftCols(H);
  Mat<S> dh_bwd_rev(T * B, H);
  reverse_time<S>(dout.rightCols(H), B, T, dh_bwd_rev);

  dx.setZero();
  lstm_backward<S>(x, B, T, p.fwd, cache.fwd, &dh_fwd, nullptr, nullptr, grad.fwd, dx, dh0_fwd,
                   dc0_fwd);
  Mat<S> dx_rev = Mat<S>::Zero(T * B, x.cols());
  lstm_backward<S>(cache.x_rev.view(), B, T, p.bwd, cache.bwd, &dh_bwd_rev, nullptr, nullptr,
                   grad.bwd, dx_rev, dh0_bwd, dc0_bwd);
  for (Index t = 0; t < T; ++t) {
    dx.middleRows(t * B, B) += dx_rev.middleRows((T - 1 - t) * B, B);
  }
}

}  // namespace evlink::nn
